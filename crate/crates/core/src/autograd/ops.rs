//! Forward kernels and their vector-Jacobian products.
//!
//! Every function here is pure. The tape wraps them, and the gradient-free
//! inference path calls them directly, so both paths produce bitwise-equal
//! values.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

fn conv_out_extent(input: usize, kernel: usize, geom: ConvGeometry) -> usize {
    (input + 2 * geom.pad - kernel) / geom.stride + 1
}

/// Output indices `o` whose source index `o*stride + k - pad` falls inside `[0, n)`.
#[inline]
fn valid_range(n_out: usize, n_in: usize, k: usize, geom: ConvGeometry) -> (usize, usize) {
    let s = geom.stride;
    // o*s + k >= pad
    let lo = if k >= geom.pad {
        0
    } else {
        (geom.pad - k).div_ceil(s)
    };
    // o*s + k - pad <= n_in - 1
    let limit = n_in + geom.pad;
    let hi = if k >= limit {
        0
    } else {
        ((limit - 1 - k) / s + 1).min(n_out)
    };
    (lo, hi.max(lo))
}

struct ConvDims {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims(input: &Tensor, kernel: &Tensor, bias: &Tensor, geom: ConvGeometry) -> Result<ConvDims> {
    if geom.stride == 0 {
        return Err(Error::shape("conv2d", "stride must be positive"));
    }
    let (cin, h, w) = input.chw("conv2d")?;
    let (cout, kcin, kh, kw) = match kernel.shape()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be [Cout,Cin,kH,kW], got {:?}", kernel.shape()),
            ))
        }
    };
    if kcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels, kernel expects {kcin}"),
        ));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(
            "conv2d",
            format!("bias must be [{cout}], got {:?}", bias.shape()),
        ));
    }
    if h + 2 * geom.pad < kh || w + 2 * geom.pad < kw {
        return Err(Error::shape(
            "conv2d",
            format!("padded input {h}x{w} (pad {}) smaller than kernel {kh}x{kw}", geom.pad),
        ));
    }
    Ok(ConvDims {
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ho: conv_out_extent(h, kh, geom),
        wo: conv_out_extent(w, kw, geom),
    })
}

/// Zero-padded cross-correlation.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let d = conv_dims(input, kernel, bias, geom)?;
    let (x, k) = (input.data(), kernel.data());
    let plane = d.ho * d.wo;
    let mut out = vec![0.0; d.cout * plane];
    let s = geom.stride;
    for o in 0..d.cout {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        out_plane.fill(bias.data()[o]);
        for c in 0..d.cin {
            let in_plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
            for u in 0..d.kh {
                let (i_lo, i_hi) = valid_range(d.ho, d.h, u, geom);
                for v in 0..d.kw {
                    let wgt = k[((o * d.cin + c) * d.kh + u) * d.kw + v];
                    let (j_lo, j_hi) = valid_range(d.wo, d.w, v, geom);
                    if j_lo >= j_hi {
                        continue;
                    }
                    for i in i_lo..i_hi {
                        let row = (i * s + u - geom.pad) * d.w;
                        let dst = &mut out_plane[i * d.wo + j_lo..i * d.wo + j_hi];
                        if s == 1 {
                            let src = &in_plane[row + j_lo + v - geom.pad..row + j_hi + v - geom.pad];
                            for (a, b) in dst.iter_mut().zip(src) {
                                *a += wgt * b;
                            }
                        } else {
                            for (n, a) in dst.iter_mut().enumerate() {
                                *a += wgt * in_plane[row + (j_lo + n) * s + v - geom.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[d.cout, d.ho, d.wo], out)
}

/// Gradients of [`conv2d`] with respect to `(input, kernel, bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    geom: ConvGeometry,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let d = conv_dims(input, kernel, bias, geom)?;
    let (x, k, g) = (input.data(), kernel.data(), grad_out.data());
    let plane = d.ho * d.wo;
    let in_plane_len = d.h * d.w;
    let s = geom.stride;
    let mut gx = vec![0.0; input.numel()];
    let mut gk = vec![0.0; kernel.numel()];
    let mut gb = vec![0.0; d.cout];
    for o in 0..d.cout {
        let g_plane = &g[o * plane..(o + 1) * plane];
        gb[o] = g_plane.iter().sum();
        for c in 0..d.cin {
            let in_plane = &x[c * in_plane_len..(c + 1) * in_plane_len];
            let gx_plane = &mut gx[c * in_plane_len..(c + 1) * in_plane_len];
            for u in 0..d.kh {
                let (i_lo, i_hi) = valid_range(d.ho, d.h, u, geom);
                for v in 0..d.kw {
                    let kidx = ((o * d.cin + c) * d.kh + u) * d.kw + v;
                    let wgt = k[kidx];
                    let (j_lo, j_hi) = valid_range(d.wo, d.w, v, geom);
                    if j_lo >= j_hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for i in i_lo..i_hi {
                        let row = (i * s + u - geom.pad) * d.w;
                        let gsrc = &g_plane[i * d.wo + j_lo..i * d.wo + j_hi];
                        if s == 1 {
                            let base = row + j_lo + v - geom.pad;
                            let xs = &in_plane[base..base + gsrc.len()];
                            for (a, b) in gsrc.iter().zip(xs) {
                                acc += a * b;
                            }
                            let gxs = &mut gx_plane[base..base + gsrc.len()];
                            for (dst, a) in gxs.iter_mut().zip(gsrc) {
                                *dst += wgt * a;
                            }
                        } else {
                            for (n, a) in gsrc.iter().enumerate() {
                                let idx = row + (j_lo + n) * s + v - geom.pad;
                                acc += a * in_plane[idx];
                                gx_plane[idx] += wgt * a;
                            }
                        }
                    }
                    gk[kidx] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), gx)?,
        Tensor::new(kernel.shape(), gk)?,
        Tensor::new(&[d.cout], gb)?,
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

pub fn nearest_upsample2x(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw("nearest_upsample2x")?;
    let (h2, w2) = (2 * h, 2 * w);
    let src = x.data();
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for i in 0..h2 {
            let src_row = &src[(ch * h + i / 2) * w..(ch * h + i / 2 + 1) * w];
            let dst_row = &mut out[(ch * h2 + i) * w2..(ch * h2 + i + 1) * w2];
            for (j, dst) in dst_row.iter_mut().enumerate() {
                *dst = src_row[j / 2];
            }
        }
    }
    Tensor::new(&[c, h2, w2], out)
}

pub fn nearest_upsample2x_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = match input_shape[..] {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("nearest_upsample2x", "input must be [C,H,W]")),
    };
    let (h2, w2) = (2 * h, 2 * w);
    let g = grad_out.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                out[(ch * h + i / 2) * w + j / 2] += g[(ch * h2 + i) * w2 + j];
            }
        }
    }
    Tensor::new(input_shape, out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = a.chw("concat_channels")?;
    let (cb, hb, wb) = b.chw("concat_channels")?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            format!("spatial extents differ: {ha}x{wa} vs {hb}x{wb}"),
        ));
    }
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(&[ca + cb, ha, wa], data)
}

/// Splits the output gradient at channel `ca`.
pub fn concat_channels_backward(ca: usize, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = grad_out.chw("concat_channels")?;
    let split = ca * h * w;
    let g = grad_out.data();
    Ok((
        Tensor::new(&[ca, h, w], g[..split].to_vec())?,
        Tensor::new(&[c - ca, h, w], g[split..].to_vec())?,
    ))
}

/// Per-pixel softmax over the channel axis, stabilized by max subtraction.
pub fn softmax_channels(z: &Tensor) -> Result<Tensor> {
    let (c, h, w) = z.chw("softmax_channels")?;
    let hw = h * w;
    let src = z.data();
    let mut out = vec![0.0; src.len()];
    for px in 0..hw {
        let mut max = f64::NEG_INFINITY;
        for ch in 0..c {
            max = max.max(src[ch * hw + px]);
        }
        let mut denom = 0.0;
        for ch in 0..c {
            let e = (src[ch * hw + px] - max).exp();
            out[ch * hw + px] = e;
            denom += e;
        }
        for ch in 0..c {
            out[ch * hw + px] /= denom;
        }
    }
    Tensor::new(z.shape(), out)
}

/// Jacobian-vector product of the softmax, given its output `probs`.
pub fn softmax_channels_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = probs.chw("softmax_channels")?;
    let hw = h * w;
    let (p, g) = (probs.data(), grad_out.data());
    let mut out = vec![0.0; p.len()];
    for px in 0..hw {
        let mut dot = 0.0;
        for ch in 0..c {
            dot += p[ch * hw + px] * g[ch * hw + px];
        }
        for ch in 0..c {
            let i = ch * hw + px;
            out[i] = p[i] * (g[i] - dot);
        }
    }
    Tensor::new(probs.shape(), out)
}

/// Mean of scalar tensors.
pub fn mean_scalars(xs: &[&Tensor]) -> Result<Tensor> {
    if xs.is_empty() {
        return Err(Error::shape("mean", "no inputs"));
    }
    let sum: f64 = xs.iter().map(|t| t.item()).sum();
    Ok(Tensor::scalar(sum / xs.len() as f64))
}
