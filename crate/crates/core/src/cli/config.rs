//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and falls
//! back to its default; unknown or repeated keys are errors.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::{ClassMix, GenSpec};
use crate::error::{Error, Result};
use crate::schedules::ScheduleConfig;
use crate::teacher_student::{AdamW, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub image_size: usize,
    pub num_classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub ema_beta: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub annot_fraction: f64,
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    pub co_training: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            image_size: 64,
            num_classes: 4,
            epochs: 60,
            batch_size: 8,
            warmup_fraction: 0.25,
            alpha_start: 0.9,
            alpha_end: 0.01,
            tau_start: 0.95,
            tau_end: 0.25,
            ema_beta: 0.999,
            lr_start: 0.01,
            lr_end: 0.00001,
            weight_decay: 0.001,
            clip_norm: 1.0,
            patience: 15,
            annot_fraction: 0.3,
            train_images: 200,
            val_images: 40,
            test_images: 40,
            co_training: true,
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| Error::Line {
        line,
        detail: format!("{key}: cannot parse {raw:?}: {e}"),
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, raw)) = content.split_once('=') else {
                return Err(Error::Line {
                    line,
                    detail: format!("expected `key = value`, got {content:?}"),
                });
            };
            let (key, raw) = (key.trim(), raw.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Line {
                    line,
                    detail: format!("duplicate key {key}"),
                });
            }
            match key {
                "seed" => cfg.seed = value(line, key, raw)?,
                "image_size" => cfg.image_size = value(line, key, raw)?,
                "num_classes" => cfg.num_classes = value(line, key, raw)?,
                "epochs" => cfg.epochs = value(line, key, raw)?,
                "batch_size" => cfg.batch_size = value(line, key, raw)?,
                "warmup_fraction" => cfg.warmup_fraction = value(line, key, raw)?,
                "alpha_start" => cfg.alpha_start = value(line, key, raw)?,
                "alpha_end" => cfg.alpha_end = value(line, key, raw)?,
                "tau_start" => cfg.tau_start = value(line, key, raw)?,
                "tau_end" => cfg.tau_end = value(line, key, raw)?,
                "ema_beta" => cfg.ema_beta = value(line, key, raw)?,
                "lr_start" => cfg.lr_start = value(line, key, raw)?,
                "lr_end" => cfg.lr_end = value(line, key, raw)?,
                "weight_decay" => cfg.weight_decay = value(line, key, raw)?,
                "clip_norm" => cfg.clip_norm = value(line, key, raw)?,
                "patience" => cfg.patience = value(line, key, raw)?,
                "annot_fraction" => cfg.annot_fraction = value(line, key, raw)?,
                "train_images" => cfg.train_images = value(line, key, raw)?,
                "val_images" => cfg.val_images = value(line, key, raw)?,
                "test_images" => cfg.test_images = value(line, key, raw)?,
                "co_training" => cfg.co_training = value(line, key, raw)?,
                _ => {
                    return Err(Error::Line {
                        line,
                        detail: format!("unknown key {key}"),
                    })
                }
            }
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Every key in a fixed order; floats use the shortest exact representation.
    pub fn serialize(&self) -> String {
        format!(
            "seed = {}\nimage_size = {}\nnum_classes = {}\nepochs = {}\nbatch_size = {}\n\
             warmup_fraction = {}\nalpha_start = {}\nalpha_end = {}\ntau_start = {}\ntau_end = {}\n\
             ema_beta = {}\nlr_start = {}\nlr_end = {}\nweight_decay = {}\nclip_norm = {}\n\
             patience = {}\nannot_fraction = {}\ntrain_images = {}\nval_images = {}\ntest_images = {}\n\
             co_training = {}\n",
            self.seed,
            self.image_size,
            self.num_classes,
            self.epochs,
            self.batch_size,
            self.warmup_fraction,
            self.alpha_start,
            self.alpha_end,
            self.tau_start,
            self.tau_end,
            self.ema_beta,
            self.lr_start,
            self.lr_end,
            self.weight_decay,
            self.clip_norm,
            self.patience,
            self.annot_fraction,
            self.train_images,
            self.val_images,
            self.test_images,
            self.co_training,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.gen_spec().validate()?;
        if !(0.0..=1.0).contains(&self.tau_end) || !(0.0..=1.0).contains(&self.tau_start) {
            return Err(Error::Config(format!(
                "tau values must lie in [0, 1], got {} -> {}",
                self.tau_start, self.tau_end
            )));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: ScheduleConfig {
                total_epochs: self.epochs,
                warmup_fraction: self.warmup_fraction,
                alpha_start: self.alpha_start,
                alpha_end: self.alpha_end,
                tau_start: self.tau_start,
                tau_end: self.tau_end,
                lr_start: self.lr_start,
                lr_end: self.lr_end,
                ema_beta: self.ema_beta,
            },
            num_classes: self.num_classes,
            batch_size: self.batch_size,
            optimizer: AdamW {
                weight_decay: self.weight_decay,
                ..AdamW::default()
            },
            clip_norm: self.clip_norm,
            patience: self.patience,
            seed: self.seed,
            co_training: self.co_training,
        }
    }

    pub fn gen_spec(&self) -> GenSpec {
        GenSpec {
            seed: self.seed,
            train: self.train_images,
            val: self.val_images,
            test: self.test_images,
            size: self.image_size,
            annot_fraction: self.annot_fraction,
            mix: ClassMix::default(),
        }
    }
}
