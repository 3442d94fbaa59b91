//! Synthetic gland tiles with dense oracle masks, and their sparsification.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mask::{LabelMask, BENIGN, MALIGNANT, PDCG, STROMA, UNLABELED};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// One gland structure placed in a tile.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub class: u8,
    /// Row-major pixel indices claimed by this instance.
    pub pixels: Vec<usize>,
    pub annotated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[3, H, W]`, values in `[0, 1]` on the 8-bit grid.
    pub image: Tensor,
    pub sparse_mask: LabelMask,
    pub dense_mask: LabelMask,
    pub instances: Vec<Instance>,
    /// Instances abandoned after exhausting the placement budget.
    pub dropped: usize,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        (self.dense_mask.height(), self.dense_mask.width())
    }

    pub fn count_class(&self, class: u8) -> usize {
        self.instances.iter().filter(|i| i.class == class).count()
    }
}

/// Instance-count ranges per gland class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMix {
    pub benign: RangeInclusive<usize>,
    pub malignant: RangeInclusive<usize>,
    pub pdcg: RangeInclusive<usize>,
    /// Expected pixel share of stroma, benign, malignant and PDC/G.
    pub prevalence: [f64; 4],
}

impl Default for ClassMix {
    fn default() -> Self {
        ClassMix {
            benign: 1..=3,
            malignant: 1..=3,
            pdcg: 0..=2,
            prevalence: [0.45, 0.35, 0.15, 0.05],
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 40;
/// A placement is accepted when at most this share of its shape is already taken.
const MAX_OVERLAP: f64 = 0.3;

const STROMA_RGB: [f64; 3] = [0.91, 0.70, 0.80];
const BENIGN_RGB: [f64; 3] = [0.62, 0.38, 0.68];
const LUMEN_RGB: [f64; 3] = [0.96, 0.90, 0.94];
const MALIGNANT_RGB: [f64; 3] = [0.52, 0.26, 0.55];
const PDCG_RGB: [f64; 3] = [0.38, 0.24, 0.58];
/// Per-channel half-width of the uniform colour jitter per instance.
const INSTANCE_JITTER: f64 = 0.07;
/// Half-width of the uniform per-pixel noise.
const PIXEL_NOISE: f64 = 0.03;
const STROMA_TEXTURE: f64 = 0.08;

/// Smooth noise in `[-1, 1]` from bilinear interpolation of a random lattice.
struct ValueNoise {
    cell: usize,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, size: usize, cell: usize) -> Self {
        let cols = size / cell + 2;
        let lattice = (0..cols * cols).map(|_| rng.random_range(-1.0..=1.0)).collect();
        ValueNoise { cell, cols, lattice }
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        let (fy, fx) = (row as f64 / self.cell as f64, col as f64 / self.cell as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let l = |y: usize, x: usize| self.lattice[y * self.cols + x];
        let top = l(y0, x0) * (1.0 - tx) + l(y0, x0 + 1) * tx;
        let bottom = l(y0 + 1, x0) * (1.0 - tx) + l(y0 + 1, x0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// A candidate structure: which pixels it covers and how each is painted.
struct Shape {
    pixels: Vec<(usize, Paint)>,
}

#[derive(Clone, Copy)]
enum Paint {
    Epithelium,
    Lumen,
}

fn benign_shape(rng: &mut ChaCha8Rng, size: usize, scale: f64) -> Shape {
    let a = rng.random_range(12.0..=18.0) * scale;
    let b = rng.random_range(12.0..=18.0) * scale;
    let lumen = rng.random_range(0.45..=0.6);
    let theta = rng.random_range(0.0..PI);
    let reach = a.max(b);
    let (cy, cx) = centre(rng, size, reach * 0.6);
    let (s, c) = theta.sin_cos();
    let mut pixels = Vec::new();
    for (row, col) in bbox(cy, cx, reach, size) {
        let (dy, dx) = (row as f64 - cy, col as f64 - cx);
        let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
        let r2 = (u / a).powi(2) + (v / b).powi(2);
        if r2 <= 1.0 {
            let paint = if r2 <= lumen * lumen { Paint::Lumen } else { Paint::Epithelium };
            pixels.push((row * size + col, paint));
        }
    }
    Shape { pixels }
}

fn malignant_shape(rng: &mut ChaCha8Rng, size: usize, scale: f64) -> Shape {
    let r0 = rng.random_range(8.0..=12.0) * scale;
    let harmonics: Vec<(f64, f64, f64)> = (2..=4)
        .map(|k| (k as f64, rng.random_range(0.0..=0.12), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let reach = r0 * 1.4;
    let (cy, cx) = centre(rng, size, r0 * 0.6);
    let mut pixels = Vec::new();
    for (row, col) in bbox(cy, cx, reach, size) {
        let (dy, dx) = (row as f64 - cy, col as f64 - cx);
        let phi = dy.atan2(dx);
        let radius = r0 * (1.0 + harmonics.iter().map(|(k, amp, ph)| amp * (k * phi + ph).cos()).sum::<f64>());
        if (dy * dy + dx * dx).sqrt() <= radius {
            pixels.push((row * size + col, Paint::Epithelium));
        }
    }
    Shape { pixels }
}

fn pdcg_shape(rng: &mut ChaCha8Rng, size: usize, scale: f64) -> Shape {
    let spread = 7.0 * scale;
    let (cy, cx) = centre(rng, size, spread * 0.5);
    let discs = rng.random_range(3..=6);
    let mut covered = vec![false; size * size];
    for _ in 0..discs {
        let r = rng.random_range(3.5..=5.5) * scale;
        let ang = rng.random_range(0.0..2.0 * PI);
        let dist = rng.random_range(0.0..=spread);
        let (dy, dx) = (cy + dist * ang.sin(), cx + dist * ang.cos());
        for (row, col) in bbox(dy, dx, r, size) {
            let (ey, ex) = (row as f64 - dy, col as f64 - dx);
            if ey * ey + ex * ex <= r * r {
                covered[row * size + col] = true;
            }
        }
    }
    Shape {
        pixels: covered
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| (i, Paint::Epithelium))
            .collect(),
    }
}

fn centre(rng: &mut ChaCha8Rng, size: usize, margin: f64) -> (f64, f64) {
    let lo = margin.min(size as f64 / 2.0 - 1.0);
    let hi = size as f64 - 1.0 - lo;
    (rng.random_range(lo..=hi), rng.random_range(lo..=hi))
}

fn bbox(cy: f64, cx: f64, reach: f64, size: usize) -> impl Iterator<Item = (usize, usize)> {
    let clamp = |v: f64| v.max(0.0).min(size as f64 - 1.0) as usize;
    let (r0, r1) = (clamp((cy - reach).floor()), clamp((cy + reach).ceil()));
    let (c0, c1) = (clamp((cx - reach).floor()), clamp((cx + reach).ceil()));
    (r0..=r1).flat_map(move |r| (c0..=c1).map(move |c| (r, c)))
}

fn jittered(rng: &mut ChaCha8Rng, base: [f64; 3]) -> [f64; 3] {
    base.map(|v| v + rng.random_range(-INSTANCE_JITTER..=INSTANCE_JITTER))
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Generates one tile. Fully determined by `seed`, `size` and `mix`.
pub fn generate_sample(seed: u64, size: usize, mix: &ClassMix) -> Result<Sample> {
    if size < 32 || size % 2 != 0 {
        return Err(Error::Data(format!("tile size must be even and >= 32, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = size as f64 / 64.0;
    let n = size * size;

    let intensity = ValueNoise::new(&mut rng, size, 8);
    let tint = ValueNoise::new(&mut rng, size, 16);
    let mut rgb: Vec<[f64; 3]> = (0..n)
        .map(|px| {
            let (row, col) = (px / size, px % size);
            let a = STROMA_TEXTURE * intensity.at(row, col);
            let t = 0.04 * tint.at(row, col);
            [STROMA_RGB[0] + a + t, STROMA_RGB[1] + a, STROMA_RGB[2] + a - t]
        })
        .collect();

    let mut dense = LabelMask::filled(size, size, STROMA);
    let mut instances = Vec::new();
    let mut dropped = 0;

    let mut plan = Vec::new();
    for (class, range) in [(BENIGN, &mix.benign), (MALIGNANT, &mix.malignant), (PDCG, &mix.pdcg)] {
        let count = rng.random_range(range.clone());
        plan.extend(std::iter::repeat_n(class, count));
    }

    for class in plan {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let shape = match class {
                BENIGN => benign_shape(&mut rng, size, scale),
                MALIGNANT => malignant_shape(&mut rng, size, scale),
                _ => pdcg_shape(&mut rng, size, scale),
            };
            if shape.pixels.is_empty() {
                continue;
            }
            let free: Vec<(usize, Paint)> = shape
                .pixels
                .iter()
                .copied()
                .filter(|&(px, _)| dense.data()[px] == STROMA)
                .collect();
            let overlap = 1.0 - free.len() as f64 / shape.pixels.len() as f64;
            if free.is_empty() || overlap > MAX_OVERLAP {
                continue;
            }
            let (epi, lumen) = (
                jittered(&mut rng, match class {
                    BENIGN => BENIGN_RGB,
                    MALIGNANT => MALIGNANT_RGB,
                    _ => PDCG_RGB,
                }),
                jittered(&mut rng, LUMEN_RGB),
            );
            for &(px, paint) in &free {
                dense.data_mut()[px] = class;
                rgb[px] = match paint {
                    Paint::Epithelium => epi,
                    Paint::Lumen => lumen,
                };
            }
            instances.push(Instance {
                class,
                pixels: free.into_iter().map(|(px, _)| px).collect(),
                annotated: true,
            });
            placed = true;
            break;
        }
        if !placed {
            dropped += 1;
        }
    }

    let mut data = vec![0.0; 3 * n];
    for (px, colour) in rgb.iter().enumerate() {
        for ch in 0..3 {
            let noise = rng.random_range(-PIXEL_NOISE..=PIXEL_NOISE);
            data[ch * n + px] = quantize(colour[ch] + noise);
        }
    }

    Ok(Sample {
        image: Tensor::new(&[3, size, size], data)?,
        sparse_mask: dense.clone(),
        dense_mask: dense,
        instances,
        dropped,
    })
}

/// Hides unannotated structures and most stroma behind the sentinel.
///
/// Each instance is kept with probability `annot_fraction` (one is forced if
/// none survives). Stroma stays labeled only within two pixels of a kept
/// instance and inside two random rectangles.
pub fn sparsify(sample: &Sample, annot_fraction: f64, seed: u64) -> Result<Sample> {
    if !(annot_fraction > 0.0 && annot_fraction <= 1.0) {
        return Err(Error::Range {
            what: "annot_fraction",
            value: annot_fraction,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = sample.size();
    let dense = &sample.dense_mask;
    let mut out = sample.clone();
    for inst in &mut out.instances {
        inst.annotated = rng.random::<f64>() < annot_fraction;
    }
    if !out.instances.is_empty() && !out.instances.iter().any(|i| i.annotated) {
        let pick = rng.random_range(0..out.instances.len());
        out.instances[pick].annotated = true;
    }

    let mut sparse = LabelMask::filled(w, h, UNLABELED);
    for inst in out.instances.iter().filter(|i| i.annotated) {
        for &px in &inst.pixels {
            sparse.data_mut()[px] = inst.class;
        }
    }
    // Two-pixel (Chebyshev) ring of stroma around kept instances.
    let kept: Vec<usize> = out
        .instances
        .iter()
        .filter(|i| i.annotated)
        .flat_map(|i| i.pixels.iter().copied())
        .collect();
    for px in kept {
        let (r, c) = ((px / w) as isize, (px % w) as isize);
        for dr in -2..=2 {
            for dc in -2..=2 {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let q = rr as usize * w + cc as usize;
                if dense.data()[q] == STROMA {
                    sparse.data_mut()[q] = STROMA;
                }
            }
        }
    }
    for _ in 0..2 {
        let rh = rng.random_range(h / 8..=h / 4);
        let rw = rng.random_range(w / 8..=w / 4);
        let r0 = rng.random_range(0..=h - rh);
        let c0 = rng.random_range(0..=w - rw);
        for r in r0..r0 + rh {
            for c in c0..c0 + rw {
                let q = r * w + c;
                if dense.data()[q] == STROMA {
                    sparse.data_mut()[q] = STROMA;
                }
            }
        }
    }
    out.sparse_mask = sparse;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let mix = ClassMix::default();
        let a = generate_sample(7, 64, &mix).unwrap();
        let b = generate_sample(7, 64, &mix).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.image, generate_sample(8, 64, &mix).unwrap().image);
    }

    #[test]
    fn instances_are_non_empty_disjoint_and_in_bounds() {
        let mix = ClassMix::default();
        for seed in 0..50 {
            let s = generate_sample(seed, 64, &mix).unwrap();
            let mut owner = vec![None; 64 * 64];
            for (k, inst) in s.instances.iter().enumerate() {
                assert!(!inst.pixels.is_empty());
                for &px in &inst.pixels {
                    assert!(px < 64 * 64);
                    assert!(owner[px].is_none(), "pixel {px} claimed twice");
                    owner[px] = Some(k);
                    assert_eq!(s.dense_mask.data()[px], inst.class);
                }
            }
            assert!(!s.dense_mask.has_sentinel());
            assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            // Every value sits on the 8-bit grid.
            assert!(s.image.data().iter().all(|&v| ((v * 255.0).round() / 255.0) == v));
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(generate_sample(0, 30, &ClassMix::default()).is_err());
        assert!(generate_sample(0, 33, &ClassMix::default()).is_err());
    }

    #[test]
    fn sparse_agrees_with_dense() {
        let mix = ClassMix::default();
        for seed in 0..30 {
            let s = generate_sample(seed, 64, &mix).unwrap();
            let sp = sparsify(&s, 0.3, seed + 1000).unwrap();
            assert!(sp.instances.iter().any(|i| i.annotated));
            for (a, b) in sp.sparse_mask.data().iter().zip(sp.dense_mask.data()) {
                assert!(*a == UNLABELED || a == b);
            }
            for inst in sp.instances.iter().filter(|i| !i.annotated) {
                assert!(inst.pixels.iter().all(|&px| sp.sparse_mask.data()[px] == UNLABELED));
            }
            assert_eq!(sp.dense_mask, s.dense_mask);
        }
    }

    #[test]
    fn full_annotation_labels_all_glands() {
        let s = generate_sample(3, 64, &ClassMix::default()).unwrap();
        let sp = sparsify(&s, 1.0, 9).unwrap();
        for (a, b) in sp.sparse_mask.data().iter().zip(sp.dense_mask.data()) {
            if *b != STROMA {
                assert_eq!(a, b);
            } else {
                assert!(*a == STROMA || *a == UNLABELED);
            }
        }
    }

    #[test]
    fn rejects_bad_fraction() {
        let s = generate_sample(3, 64, &ClassMix::default()).unwrap();
        assert!(sparsify(&s, 0.0, 1).is_err());
        assert!(sparsify(&s, 1.5, 1).is_err());
    }
}
