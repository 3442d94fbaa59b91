use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::metrics_csv::{read_csv, write_csv};
use super::report::render_svg;
use crate::autograd::Tensor;
use crate::data::{load_split, netpbm, write_dataset, LabelMask, Sample, Split, BENIGN, CLASS_NAMES, MALIGNANT, PDCG};
use crate::error::{Error, Result};
use crate::metrics::{percent, ConfusionTally};
use crate::teacher_student::{predict, run_training, Control, EpochRecord, TrainerState};

#[derive(Debug, Parser)]
#[command(name = "sgts", version, about = "Sparse-label gland segmentation with an EMA teacher")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with sparse and dense masks.
    GenData(GenDataArgs),
    /// Train a student network, writing checkpoints, metrics.csv and curves.svg.
    #[command(long_about = "Train a student network, writing best.ckpt, last.ckpt, metrics.csv and curves.svg.\n\n\
        Defaults are scaled for a single CPU core: 60 epochs, batch size 8 and patience 15 \
        (a full-scale run would use 250 epochs, batch size 16 and patience 50). \
        All of them can be changed in the config file.")]
    Train(TrainArgs),
    /// Evaluate a checkpoint against the dense masks of a split.
    Eval(EvalArgs),
    /// Segment one image, writing a label mask and a colour overlay.
    Infer(InferArgs),
    /// Render training curves from a metrics.csv file.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Read defaults from a run config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub annot_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Run config; all keys are optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run with the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs in this invocation.
    #[arg(long)]
    pub halt_after: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each predicted mask as `<id>.pred.pgm` here.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Writes `<out>.mask.pgm` and `<out>.overlay.ppm`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit status for an error: 1 usage or config, 2 data, 3 numerical.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Line { .. } | Error::Range { .. } => 1,
        Error::NumericalAbort { .. } | Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Infer(a) => cmd_infer(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.train_images = args.train.unwrap_or(cfg.train_images);
    cfg.val_images = args.val.unwrap_or(cfg.val_images);
    cfg.test_images = args.test.unwrap_or(cfg.test_images);
    cfg.image_size = args.size.unwrap_or(cfg.image_size);
    cfg.annot_fraction = args.annot_fraction.unwrap_or(cfg.annot_fraction);
    let spec = cfg.gen_spec();
    spec.validate()?;
    create_dir(&args.out)?;
    write_dataset(&args.out, &spec)?;
    info!(
        "wrote {}/{}/{} images of {}x{} to {}",
        spec.train,
        spec.val,
        spec.test,
        spec.size,
        spec.size,
        args.out.display()
    );
    Ok(())
}

fn load_samples(root: &Path, split: Split, cfg: &RunConfig) -> Result<Vec<Sample>> {
    let samples: Vec<Sample> = load_split(root, split)?.into_iter().map(|(_, s)| s).collect();
    for s in &samples {
        if s.size() != (cfg.image_size, cfg.image_size) {
            return Err(Error::Data(format!(
                "{split} image is {:?} but image_size = {}",
                s.size(),
                cfg.image_size
            )));
        }
        s.sparse_mask.validate(cfg.num_classes)?;
        s.dense_mask.validate(cfg.num_classes)?;
    }
    Ok(samples)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub final_state: TrainerState,
    pub stopped_early: bool,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    let train = load_samples(&args.data, Split::Train, &cfg)?;
    let val = load_samples(&args.data, Split::Val, &cfg)?;
    create_dir(&args.out)?;
    let csv_path = args.out.join("metrics.csv");
    let (state, mut rows) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config != cfg {
                return Err(Error::Checkpoint(format!(
                    "{} was written with a different configuration",
                    path.display()
                )));
            }
            let mut rows = read_csv(&csv_path)?;
            rows.retain(|r| r.epoch < ck.state.epoch);
            if rows.len() != ck.state.epoch {
                return Err(Error::Data(format!(
                    "metrics.csv holds {} rows before epoch {}",
                    rows.len(),
                    ck.state.epoch
                )));
            }
            (ck.state, rows)
        }
        None => (TrainerState::new(&train_cfg)?, Vec::new()),
    };
    write_csv(&csv_path, &rows)?;
    let mut ran = 0usize;
    let outcome = run_training(&train_cfg, &train, &val, state, |record, state, improved| {
        rows.push(record.clone());
        write_csv(&csv_path, &rows)?;
        let ck = Checkpoint {
            config: cfg.clone(),
            state: state.clone(),
        };
        ck.save(&args.out.join("last.ckpt"))?;
        if improved {
            ck.save(&args.out.join("best.ckpt"))?;
        }
        ran += 1;
        Ok(match args.halt_after {
            Some(n) if ran >= n => Control::Halt,
            _ => Control::Continue,
        })
    })?;
    write_file(&args.out.join("curves.svg"), render_svg(&rows))?;
    if outcome.stopped_early {
        info!("early stop after epoch {}", outcome.final_state.epoch - 1);
    }
    Ok(TrainSummary {
        records: rows,
        final_state: outcome.final_state,
        stopped_early: outcome.stopped_early,
    })
}

/// Per-class rows followed by a `mean` row, values in percent.
pub fn format_eval_report(tally: &ConfusionTally) -> Result<String> {
    let cell = |v: Option<f64>| v.map(percent).unwrap_or_else(|| "n/a".into());
    let mut out = String::from("class,iou,dice\n");
    for (c, (iou, dice)) in tally.iou().into_iter().zip(tally.dice()).enumerate() {
        let name = CLASS_NAMES.get(c).map(|s| s.to_string()).unwrap_or_else(|| format!("class{c}"));
        out.push_str(&format!("{name},{},{}\n", cell(iou), cell(dice)));
    }
    out.push_str(&format!("mean,{},{}\n", percent(tally.miou()?), percent(tally.mdice()?)));
    Ok(out)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<ConfusionTally> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let split = Split::parse(&args.split)?;
    let samples = load_split(&args.data, split)?;
    let c = ck.state.student.num_classes();
    if let Some(pred_dir) = &args.pred_dir {
        create_dir(pred_dir)?;
    }
    let mut tally = ConfusionTally::new(c);
    for (id, s) in &samples {
        s.dense_mask.validate(c).map_err(|_| {
            Error::Data(format!("{id}: reference labels exceed the checkpoint's {c} classes"))
        })?;
        let pred = predict(&ck.state.student, &s.image)?;
        tally.accumulate(&pred, &s.dense_mask)?;
        if let Some(pred_dir) = &args.pred_dir {
            netpbm::write_pgm(&pred_dir.join(format!("{id}.pred.pgm")), &pred)?;
        }
    }
    write_file(&args.out, format_eval_report(&tally)?)?;
    info!(
        "{split}: mIoU {} mDice {}",
        percent(tally.miou()?),
        percent(tally.mdice()?)
    );
    Ok(tally)
}

/// RGB bytes painted over non-stroma classes.
pub fn palette(class: u8) -> Option<[u8; 3]> {
    match class {
        BENIGN => Some([0, 255, 0]),
        MALIGNANT => Some([255, 0, 0]),
        PDCG => Some([0, 0, 255]),
        0 => None,
        _ => Some([255, 255, 255]),
    }
}

/// Blends `image` 50/50 with the class palette on every non-stroma pixel,
/// rounding halves up in 8-bit space.
pub fn overlay(image: &Tensor, mask: &LabelMask) -> Result<Tensor> {
    let (c, h, w) = image.chw("overlay")?;
    if c != 3 || (mask.height(), mask.width()) != (h, w) {
        return Err(Error::shape("overlay", "image and mask disagree"));
    }
    let hw = h * w;
    let mut out = image.clone();
    let d = out.data_mut();
    for (px, &label) in mask.data().iter().enumerate() {
        if let Some(rgb) = palette(label) {
            for ch in 0..3 {
                let byte = (d[ch * hw + px].clamp(0.0, 1.0) * 255.0).round() as u32;
                d[ch * hw + px] = ((byte + rgb[ch] as u32 + 1) / 2) as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_infer(args: &InferArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let image = netpbm::read_ppm(&args.image)?;
    let mask = predict(&ck.state.student, &image)?;
    netpbm::write_pgm(&with_suffix(&args.out, ".mask.pgm"), &mask)?;
    netpbm::write_ppm(&with_suffix(&args.out, ".overlay.ppm"), &overlay(&image, &mask)?)?;
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let rows = read_csv(&args.metrics)?;
    write_file(&args.out, render_svg(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Line { line: 2, detail: "x".into() }), 1);
        assert_eq!(exit_code(&Error::Data("x".into())), 2);
        assert_eq!(exit_code(&Error::Parse { offset: 0, detail: "x".into() }), 2);
        assert_eq!(exit_code(&Error::NumericalAbort { epoch: 3 }), 3);
    }

    #[test]
    fn overlay_blend() {
        let img = Tensor::new(&[3, 1, 2], vec![10.0 / 255.0, 1.0, 0.0, 0.5, 100.0 / 255.0, 0.2]).unwrap();
        let mask = LabelMask::new(2, 1, vec![0, BENIGN]).unwrap();
        let out = overlay(&img, &mask).unwrap();
        let bytes = netpbm::encode_ppm(&out).unwrap();
        let px = &bytes[bytes.len() - 6..];
        assert_eq!(&px[..3], &[10, 0, 100], "stroma is untouched");
        // 0.5*(255, 128, 51) + 0.5*(0, 255, 0), halves rounded up.
        assert_eq!(&px[3..], &[128, 192, 26]);
    }

    #[test]
    fn eval_report_layout() {
        let mut t = ConfusionTally::new(4);
        let m = LabelMask::new(2, 2, vec![0, 1, 2, 2]).unwrap();
        let r = LabelMask::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        t.accumulate(&m, &r).unwrap();
        let text = format_eval_report(&t).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[3], "malignant,50.00,66.67");
        assert_eq!(lines[5], "mean,62.50,66.67");
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from([
            "sgts", "train", "--data", "d", "--out", "o", "--resume", "o/last.ckpt", "--halt-after", "3",
        ])
        .unwrap();
        match cli.command {
            Command::Train(a) => {
                assert_eq!(a.halt_after, Some(3));
                assert!(a.config.is_none());
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["sgts", "gen-data"]).is_err());
    }
}
