use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::mask::LabelMask;
use super::synth::Sample;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Spatial part of an augmentation: quarter turns counter-clockwise, then an
/// optional horizontal mirror.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub quarter_turns: u8,
    pub flip: bool,
}

impl Placement {
    /// Source pixel of output `(row, col)` in a square tile of side `n`.
    pub fn source(self, row: usize, col: usize, n: usize) -> (usize, usize) {
        let col = if self.flip { n - 1 - col } else { col };
        match self.quarter_turns % 4 {
            0 => (row, col),
            1 => (col, n - 1 - row),
            2 => (n - 1 - row, n - 1 - col),
            _ => (n - 1 - col, row),
        }
    }

    fn permutation(self, n: usize) -> Vec<usize> {
        (0..n * n)
            .map(|px| {
                let (r, c) = self.source(px / n, px % n, n);
                r * n + c
            })
            .collect()
    }
}

fn permute_mask(mask: &LabelMask, perm: &[usize]) -> LabelMask {
    let data = perm.iter().map(|&src| mask.data()[src]).collect();
    LabelMask::new(mask.width(), mask.height(), data).expect("square mask")
}

/// Applies `placement` to image, both masks and instance pixel sets.
pub fn transform(sample: &Sample, placement: Placement) -> Result<Sample> {
    let (h, w) = sample.size();
    if h != w {
        return Err(Error::shape("augment", format!("tile must be square, got {h}x{w}")));
    }
    let perm = placement.permutation(h);
    let mut inverse = vec![0; perm.len()];
    for (dst, &src) in perm.iter().enumerate() {
        inverse[src] = dst;
    }
    let hw = h * w;
    let src = sample.image.data();
    let mut data = vec![0.0; 3 * hw];
    for ch in 0..3 {
        for (dst, &s) in perm.iter().enumerate() {
            data[ch * hw + dst] = src[ch * hw + s];
        }
    }
    let mut out = sample.clone();
    out.image = Tensor::new(sample.image.shape(), data)?;
    out.sparse_mask = permute_mask(&sample.sparse_mask, &perm);
    out.dense_mask = permute_mask(&sample.dense_mask, &perm);
    for inst in &mut out.instances {
        for px in &mut inst.pixels {
            *px = inverse[*px];
        }
        inst.pixels.sort_unstable();
    }
    Ok(out)
}

/// Random quarter turn, horizontal flip with probability 0.5, and additive
/// Gaussian noise of standard deviation `noise_sigma` clamped to `[0, 1]`.
pub fn augment<R: Rng>(sample: &Sample, rng: &mut R, noise_sigma: f64) -> Result<Sample> {
    let placement = Placement {
        quarter_turns: rng.random_range(0..4),
        flip: rng.random::<f64>() < 0.5,
    };
    let mut out = transform(sample, placement)?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in out.image.data_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

pub fn normalize(image: &Tensor) -> Result<Tensor> {
    per_channel(image, |v, ch| (v - IMAGENET_MEAN[ch]) / IMAGENET_STD[ch])
}

pub fn denormalize(image: &Tensor) -> Result<Tensor> {
    per_channel(image, |v, ch| v * IMAGENET_STD[ch] + IMAGENET_MEAN[ch])
}

fn per_channel(image: &Tensor, f: impl Fn(f64, usize) -> f64) -> Result<Tensor> {
    let (c, h, w) = image.chw("normalize")?;
    if c != 3 {
        return Err(Error::shape("normalize", format!("expected 3 channels, got {c}")));
    }
    let hw = h * w;
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| f(v, i / hw))
        .collect();
    Tensor::new(image.shape(), data)
}
