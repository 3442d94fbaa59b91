//! Epoch-indexed curricula for loss weighting, confidence threshold and
//! learning rate.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub total_epochs: usize,
    pub warmup_fraction: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub ema_beta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            total_epochs: 60,
            warmup_fraction: 0.25,
            alpha_start: 0.9,
            alpha_end: 0.01,
            tau_start: 0.95,
            tau_end: 0.25,
            lr_start: 0.01,
            lr_end: 0.00001,
            ema_beta: 0.999,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleState {
    pub epoch: usize,
    pub alpha: f64,
    /// `+inf` while the teacher is inactive.
    pub tau: f64,
    pub lr: f64,
    pub in_warmup: bool,
}

/// `v_end + (v_start − v_end)·(1 + cos(π·t/T))/2`.
pub fn cosine_decay(t: usize, horizon: usize, v_start: f64, v_end: f64) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::Range {
            what: "cosine horizon",
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    if t > horizon {
        return Err(Error::Range {
            what: "cosine step",
            value: t as f64,
            lo: 0.0,
            hi: horizon as f64,
        });
    }
    // `v_end + (v_start - v_end)` need not round back to `v_start`.
    if t == 0 {
        return Ok(v_start);
    }
    if t == horizon {
        return Ok(v_end);
    }
    let phase = PI * t as f64 / horizon as f64;
    Ok(v_end + 0.5 * (v_start - v_end) * (1.0 + phase.cos()))
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction must lie in (0, 1), got {}", self.warmup_fraction));
        }
        if !(self.alpha_start > self.alpha_end) || self.alpha_end < 0.0 || self.alpha_start > 1.0 {
            return bad(format!(
                "alpha schedule must satisfy 1 >= alpha_start > alpha_end >= 0, got {} -> {}",
                self.alpha_start, self.alpha_end
            ));
        }
        if !(self.tau_start > self.tau_end) {
            return bad(format!(
                "tau_start must exceed tau_end, got {} -> {}",
                self.tau_start, self.tau_end
            ));
        }
        if !(self.lr_start > self.lr_end) || self.lr_end < 0.0 {
            return bad(format!(
                "lr schedule must satisfy lr_start > lr_end >= 0, got {} -> {}",
                self.lr_start, self.lr_end
            ));
        }
        if !(self.ema_beta > 0.0 && self.ema_beta < 1.0) {
            return bad(format!("ema_beta must lie in (0, 1), got {}", self.ema_beta));
        }
        let warm = self.warmup_epochs();
        if warm < 1 || warm >= self.total_epochs {
            return bad(format!(
                "round({} * {}) = {warm} warm-up epochs must be in [1, {})",
                self.total_epochs, self.warmup_fraction, self.total_epochs
            ));
        }
        if self.total_epochs - warm < 2 {
            return bad(format!(
                "co-training needs at least two epochs after {warm} warm-up epochs of {}",
                self.total_epochs
            ));
        }
        Ok(())
    }

    pub fn warmup_epochs(&self) -> usize {
        (self.total_epochs as f64 * self.warmup_fraction).round() as usize
    }

    /// Schedule values at `epoch` with co-training enabled after warm-up.
    pub fn state_at(&self, epoch: usize) -> Result<ScheduleState> {
        self.state_with(epoch, true)
    }

    /// As [`Self::state_at`], but with `co_training = false` every epoch
    /// stays in the supervised-only regime.
    pub fn state_with(&self, epoch: usize, co_training: bool) -> Result<ScheduleState> {
        let t = self.total_epochs;
        if epoch >= t {
            return Err(Error::Range {
                what: "epoch",
                value: epoch as f64,
                lo: 0.0,
                hi: (t - 1) as f64,
            });
        }
        let lr = cosine_decay(epoch, (t - 1).max(1), self.lr_start, self.lr_end)?;
        let warm = self.warmup_epochs();
        if !co_training || epoch < warm {
            return Ok(ScheduleState {
                epoch,
                alpha: 1.0,
                tau: f64::INFINITY,
                lr,
                in_warmup: true,
            });
        }
        let step = epoch - warm;
        let horizon = t - warm - 1;
        Ok(ScheduleState {
            epoch,
            alpha: cosine_decay(step, horizon, self.alpha_start, self.alpha_end)?,
            tau: cosine_decay(step, horizon, self.tau_start, self.tau_end)?,
            lr,
            in_warmup: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_decay(0, 10, 0.9, 0.01).unwrap(), 0.9);
        assert_eq!(cosine_decay(10, 10, 0.9, 0.01).unwrap(), 0.01);
        assert!((cosine_decay(5, 10, 0.9, 0.01).unwrap() - 0.455).abs() < 1e-12);
        assert!((cosine_decay(5, 10, 0.95, 0.25).unwrap() - 0.60).abs() < 1e-12);
        assert!(cosine_decay(11, 10, 0.9, 0.01).is_err());
        assert!(cosine_decay(0, 0, 0.9, 0.01).is_err());
    }

    #[test]
    fn eight_epoch_split() {
        let cfg = ScheduleConfig {
            total_epochs: 8,
            ..Default::default()
        };
        cfg.validate().unwrap();
        let phases: Vec<bool> = (0..8).map(|e| cfg.state_at(e).unwrap().in_warmup).collect();
        assert_eq!(phases, [true, true, false, false, false, false, false, false]);
        let first = cfg.state_at(2).unwrap();
        assert_eq!((first.alpha, first.tau), (0.9, 0.95));
        let last = cfg.state_at(7).unwrap();
        assert_eq!((last.alpha, last.tau), (0.01, 0.25));
        let e0 = cfg.state_at(0).unwrap();
        assert_eq!(e0.alpha, 1.0);
        assert!(e0.tau.is_infinite());
        assert!(cfg.state_at(8).is_err());
    }

    #[test]
    fn supervised_only_mode_never_leaves_warmup() {
        let cfg = ScheduleConfig::default();
        for e in 0..cfg.total_epochs {
            let s = cfg.state_with(e, false).unwrap();
            assert!(s.in_warmup);
            assert_eq!(s.alpha, 1.0);
            assert_eq!(s.lr, cfg.state_at(e).unwrap().lr);
        }
    }

    #[test]
    fn lr_spans_full_horizon() {
        let cfg = ScheduleConfig::default();
        assert_eq!(cfg.state_at(0).unwrap().lr, 0.01);
        assert_eq!(cfg.state_at(59).unwrap().lr, 0.00001);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let base = ScheduleConfig::default();
        for bad in [
            ScheduleConfig { warmup_fraction: 0.0, ..base.clone() },
            ScheduleConfig { alpha_end: 0.95, ..base.clone() },
            ScheduleConfig { tau_start: 0.2, ..base.clone() },
            ScheduleConfig { lr_end: 0.1, ..base.clone() },
            ScheduleConfig { ema_beta: 1.0, ..base.clone() },
            ScheduleConfig { total_epochs: 2, ..base.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        base.validate().unwrap();
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_and_bounded(total in 4usize..300, frac in 0.2f64..=0.25) {
                let cfg = ScheduleConfig { total_epochs: total, warmup_fraction: frac, ..Default::default() };
                prop_assume!(cfg.validate().is_ok());
                let states: Vec<_> = (0..total).map(|e| cfg.state_at(e).unwrap()).collect();
                for w in states.windows(2) {
                    prop_assert!(w[1].alpha <= w[0].alpha);
                    prop_assert!(w[1].tau <= w[0].tau);
                    prop_assert!(w[1].lr <= w[0].lr);
                }
                let warm = cfg.warmup_epochs();
                prop_assert!((warm as f64 / total as f64 - frac).abs() <= 1.0 / total as f64);
                for s in &states[warm..] {
                    prop_assert!(s.alpha >= 0.01 && s.alpha <= 0.9);
                    prop_assert!(s.tau >= 0.25 && s.tau <= 0.95);
                }
                prop_assert!((states[warm].alpha - 0.9).abs() < 1e-12);
                prop_assert!((states[total - 1].tau - 0.25).abs() < 1e-12);
            }
        }
    }
}
