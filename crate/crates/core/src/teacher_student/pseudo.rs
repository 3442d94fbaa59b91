use crate::autograd::Tensor;
use crate::backbone::{argmax_channels, ModelParams};
use crate::data::{LabelMask, UNLABELED};
use crate::error::{Error, Result};
use crate::losses::{FusedSupervision, PixelSelection};

/// `θ_T ← β·θ_T + (1 − β)·θ_S`, elementwise and in place.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Range {
            what: "ema beta",
            value: beta,
            lo: 0.0,
            hi: 1.0,
        });
    }
    for (t, s) in teacher.tensors().iter().zip(student.tensors()) {
        if t.shape() != s.shape() {
            return Err(Error::shape(
                "ema_update",
                format!("teacher {:?} vs student {:?}", t.shape(), s.shape()),
            ));
        }
    }
    for (t, s) in teacher.tensors_mut().iter_mut().zip(student.tensors()) {
        for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = beta * *a + (1.0 - beta) * b;
        }
    }
    Ok(())
}

/// Pixels whose top class probability strictly exceeds `tau`.
pub fn confidence_mask(probs: &Tensor, tau: f64) -> Result<Vec<bool>> {
    let (c, h, w) = probs.chw("confidence_mask")?;
    let hw = h * w;
    let d = probs.data();
    Ok((0..hw)
        .map(|px| (0..c).map(|ch| d[ch * hw + px]).fold(f64::NEG_INFINITY, f64::max) > tau)
        .collect())
}

/// Ground truth wherever it exists, teacher argmax on the remaining confident
/// pixels, nothing elsewhere.
pub fn fuse(sparse_gt: &LabelMask, probs: &Tensor, conf: &[bool]) -> Result<FusedSupervision> {
    let (c, h, w) = probs.chw("fuse")?;
    let hw = h * w;
    if (sparse_gt.height(), sparse_gt.width()) != (h, w) || conf.len() != hw {
        return Err(Error::shape(
            "fuse",
            format!(
                "mask {}x{} and {} confidence flags vs probabilities {h}x{w}",
                sparse_gt.height(),
                sparse_gt.width(),
                conf.len()
            ),
        ));
    }
    sparse_gt.validate(c)?;
    let pseudo = argmax_channels(probs)?;
    let mut targets = Tensor::zeros(probs.shape());
    let mut selected = vec![false; hw];
    let t = targets.data_mut();
    for px in 0..hw {
        let label = match sparse_gt.data()[px] {
            UNLABELED if conf[px] => pseudo[px],
            UNLABELED => continue,
            gt => gt,
        };
        t[label as usize * hw + px] = 1.0;
        selected[px] = true;
    }
    Ok(FusedSupervision {
        targets,
        selection: PixelSelection::new(selected),
    })
}
