//! Five-convolution encoder–decoder with one skip connection.
//!
//! ```text
//! e1     = relu(conv3x3(image, enc1))            [8, H, W]
//! d      = relu(conv3x3/2(e1, down))             [16, H/2, W/2]
//! e2     = relu(conv3x3(d, enc2))                [16, H/2, W/2]
//! u      = relu(conv3x3(up2(e2), up))            [8, H, W]
//! logits = conv1x1(concat(u, e1), head)          [C, H, W]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ops, ConvGeometry, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const PARAM_NAMES: [&str; 10] = [
    "enc1.kernel",
    "enc1.bias",
    "down.kernel",
    "down.bias",
    "enc2.kernel",
    "enc2.bias",
    "up.kernel",
    "up.bias",
    "head.kernel",
    "head.bias",
];

const SAME: ConvGeometry = ConvGeometry { stride: 1, pad: 1 };
const DOWN: ConvGeometry = ConvGeometry { stride: 2, pad: 1 };
const POINTWISE: ConvGeometry = ConvGeometry { stride: 1, pad: 0 };

fn param_shapes(num_classes: usize) -> [Vec<usize>; 10] {
    [
        vec![8, 3, 3, 3],
        vec![8],
        vec![16, 8, 3, 3],
        vec![16],
        vec![16, 16, 3, 3],
        vec![16],
        vec![8, 16, 3, 3],
        vec![8],
        vec![num_classes, 16, 1, 1],
        vec![num_classes],
    ]
}

/// Network weights in [`PARAM_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn zeros(num_classes: usize) -> Self {
        ModelParams {
            tensors: param_shapes(num_classes).iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Uniform `[-s, s]` kernels with `s = sqrt(6 / fan_in)` and zero biases.
    ///
    /// Kernels are drawn from one ChaCha8 stream seeded with `seed`, in the
    /// order enc1, down, enc2, up, head, each in row-major order.
    pub fn init(seed: u64, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {num_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(num_classes);
        for t in params.tensors.iter_mut().step_by(2) {
            let s = t.shape();
            let fan_in = (s[1] * s[2] * s[3]) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for v in t.data_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(params)
    }

    /// Rebuilds parameters from tensors in [`PARAM_NAMES`] order, checking shapes.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != PARAM_NAMES.len() {
            return Err(Error::shape(
                "model params",
                format!("expected {} tensors, got {}", PARAM_NAMES.len(), tensors.len()),
            ));
        }
        let num_classes = tensors[9].shape()[0];
        for ((t, want), name) in tensors.iter().zip(param_shapes(num_classes)).zip(PARAM_NAMES) {
            if t.shape() != want.as_slice() {
                return Err(Error::shape(
                    "model params",
                    format!("{name} must be {want:?}, got {:?}", t.shape()),
                ));
            }
        }
        Ok(ModelParams { tensors })
    }

    pub fn num_classes(&self) -> usize {
        self.tensors[9].numel()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.iter().copied().zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Places every tensor on `tape` as a trainable leaf.
    pub fn on_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }
}

fn check_image(image: &Tensor) -> Result<(usize, usize)> {
    let (c, h, w) = image.chw("forward")?;
    if c != 3 {
        return Err(Error::shape("forward", format!("image must have 3 channels, got {c}")));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("forward", format!("image extents must be even, got {h}x{w}")));
    }
    Ok((h, w))
}

/// Gradient-free forward pass to per-pixel logits.
pub fn forward(params: &ModelParams, image: &Tensor) -> Result<Tensor> {
    check_image(image)?;
    let p = &params.tensors;
    let e1 = ops::relu(&ops::conv2d(image, &p[0], &p[1], SAME)?);
    let d = ops::relu(&ops::conv2d(&e1, &p[2], &p[3], DOWN)?);
    let e2 = ops::relu(&ops::conv2d(&d, &p[4], &p[5], SAME)?);
    let u = ops::relu(&ops::conv2d(&ops::nearest_upsample2x(&e2)?, &p[6], &p[7], SAME)?);
    let logits = ops::conv2d(&ops::concat_channels(&u, &e1)?, &p[8], &p[9], POINTWISE)?;
    if !logits.is_finite() {
        return Err(Error::NonFinite { op: "forward" });
    }
    Ok(logits)
}

/// Forward pass recorded on `tape`; `params` are handles from [`ModelParams::on_tape`].
pub fn forward_on_tape(tape: &mut Tape, params: &[Var], image: Var) -> Result<Var> {
    check_image(tape.value(image))?;
    let p = params;
    let e1 = tape.conv2d(image, p[0], p[1], SAME)?;
    let e1 = tape.relu(e1)?;
    let d = tape.conv2d(e1, p[2], p[3], DOWN)?;
    let d = tape.relu(d)?;
    let e2 = tape.conv2d(d, p[4], p[5], SAME)?;
    let e2 = tape.relu(e2)?;
    let up = tape.nearest_upsample2x(e2)?;
    let u = tape.conv2d(up, p[6], p[7], SAME)?;
    let u = tape.relu(u)?;
    let cat = tape.concat_channels(u, e1)?;
    tape.conv2d(cat, p[8], p[9], POINTWISE)
}

/// Per-pixel argmax over channels, ties resolved to the lowest index.
pub fn argmax_channels(scores: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = scores.chw("argmax")?;
    let hw = h * w;
    let d = scores.data();
    Ok((0..hw)
        .map(|px| {
            let mut best = 0;
            for ch in 1..c {
                if d[ch * hw + px] > d[best * hw + px] {
                    best = ch;
                }
            }
            best as u8
        })
        .collect())
}
