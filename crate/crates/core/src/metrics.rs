//! Pixel-level confusion counts, per-class IoU and Dice, and their macro means.
//!
//! Counts are accumulated over the whole dataset before any ratio is taken.
//! Reference pixels carrying the unlabeled sentinel are ignored.

use crate::data::{LabelMask, UNLABELED};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionTally {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionTally {
    pub fn new(num_classes: usize) -> Self {
        ConfusionTally {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    pub fn accumulate(&mut self, pred: &LabelMask, reference: &LabelMask) -> Result<()> {
        if (pred.width(), pred.height()) != (reference.width(), reference.height()) {
            return Err(Error::shape(
                "accumulate",
                format!(
                    "prediction {}x{} vs reference {}x{}",
                    pred.height(),
                    pred.width(),
                    reference.height(),
                    reference.width()
                ),
            ));
        }
        let c = self.num_classes();
        pred.validate(c)?;
        if pred.has_sentinel() {
            return Err(Error::Data("prediction mask contains the unlabeled sentinel".into()));
        }
        reference.validate(c)?;
        for (&p, &r) in pred.data().iter().zip(reference.data()) {
            if r == UNLABELED {
                continue;
            }
            if p == r {
                self.tp[p as usize] += 1;
            } else {
                self.fp[p as usize] += 1;
                self.fn_[r as usize] += 1;
            }
        }
        Ok(())
    }

    /// Component-wise sum.
    pub fn merge(&mut self, other: &ConfusionTally) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(Error::shape(
                "merge",
                format!("{} vs {} classes", self.num_classes(), other.num_classes()),
            ));
        }
        for c in 0..self.num_classes() {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
        Ok(())
    }

    fn support(&self, c: usize) -> u64 {
        self.tp[c] + self.fp[c] + self.fn_[c]
    }

    /// `None` for classes with no predicted or reference pixels.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes())
            .map(|c| {
                let s = self.support(c);
                (s > 0).then(|| self.tp[c] as f64 / s as f64)
            })
            .collect()
    }

    pub fn dice(&self) -> Vec<Option<f64>> {
        (0..self.num_classes())
            .map(|c| {
                let s = self.support(c);
                (s > 0).then(|| 2.0 * self.tp[c] as f64 / (s + self.tp[c]) as f64)
            })
            .collect()
    }

    pub fn miou(&self) -> Result<f64> {
        macro_mean(&self.iou())
    }

    pub fn mdice(&self) -> Result<f64> {
        macro_mean(&self.dice())
    }
}

fn macro_mean(values: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptySelection("macro mean"));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Formats a `[0, 1]` ratio as a percentage with two decimals.
pub fn percent(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}
