//! Forward and backward kernels for the layer set, on raw row-major slices.
//!
//! Each output element is accumulated in a fixed order (ascending input index,
//! then bias), so results do not depend on how the work is split across threads.

use crate::par;

/// `x[batch, n_in] · w[n_in, n_out] + bias[n_out]`.
pub fn dense_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * n_out];
    par::for_each_chunk(&mut out, n_out, |b, row| {
        let xr = &x[b * n_in..(b + 1) * n_in];
        for (i, &xi) in xr.iter().enumerate() {
            let wr = &w[i * n_out..(i + 1) * n_out];
            for (o, &wv) in row.iter_mut().zip(wr) {
                *o += xi * wv;
            }
        }
        if let Some(bias) = bias {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
    });
    out
}

pub struct DenseGrads {
    pub dx: Vec<f64>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> DenseGrads {
    let mut dx = vec![0.0; batch * n_in];
    par::for_each_chunk(&mut dx, n_in, |b, row| {
        let g = &dy[b * n_out..(b + 1) * n_out];
        for (i, d) in row.iter_mut().enumerate() {
            let wr = &w[i * n_out..(i + 1) * n_out];
            *d = wr.iter().zip(g).map(|(a, b)| a * b).sum();
        }
    });
    let mut dw = vec![0.0; n_in * n_out];
    par::for_each_chunk(&mut dw, n_out, |i, row| {
        for b in 0..batch {
            let xi = x[b * n_in + i];
            let g = &dy[b * n_out..(b + 1) * n_out];
            for (d, &gv) in row.iter_mut().zip(g) {
                *d += xi * gv;
            }
        }
    });
    let mut db = vec![0.0; n_out];
    for b in 0..batch {
        for (d, &gv) in db.iter_mut().zip(&dy[b * n_out..(b + 1) * n_out]) {
            *d += gv;
        }
    }
    DenseGrads { dx, dw, db }
}

/// Valid output range `t` for tap offset `off` on a length-`len` signal.
#[inline]
fn tap_range(off: isize, len: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub filter: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.filter / 2) as isize
    }
}

/// Cross-correlation with symmetric zero padding (odd filter, length kept).
pub fn conv1d_forward(x: &[f64], k: &[f64], bias: Option<&[f64]>, d: ConvDims) -> Vec<f64> {
    let ConvDims {
        c_in,
        c_out,
        len,
        filter,
        ..
    } = d;
    let pad = d.pad();
    let mut out = vec![0.0; d.batch * c_out * len];
    par::for_each_chunk(&mut out, c_out * len, |b, block| {
        let xb = &x[b * c_in * len..(b + 1) * c_in * len];
        for (o, row) in block.chunks_mut(len).enumerate() {
            for c in 0..c_in {
                let xr = &xb[c * len..(c + 1) * len];
                let kr = &k[(o * c_in + c) * filter..(o * c_in + c + 1) * filter];
                for (tap, &wv) in kr.iter().enumerate() {
                    let off = tap as isize - pad;
                    let (lo, hi) = tap_range(off, len);
                    let src = &xr[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (o, &xv) in row[lo..hi].iter_mut().zip(src) {
                        *o += wv * xv;
                    }
                }
            }
            if let Some(bias) = bias {
                row.iter_mut().for_each(|v| *v += bias[o]);
            }
        }
    });
    out
}

pub struct ConvGrads {
    pub dx: Vec<f64>,
    pub dk: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn conv1d_backward(x: &[f64], k: &[f64], dy: &[f64], d: ConvDims) -> ConvGrads {
    let ConvDims {
        batch,
        c_in,
        c_out,
        len,
        filter,
    } = d;
    let pad = d.pad();
    let mut dx = vec![0.0; batch * c_in * len];
    par::for_each_chunk(&mut dx, c_in * len, |b, block| {
        let gb = &dy[b * c_out * len..(b + 1) * c_out * len];
        for o in 0..c_out {
            let gr = &gb[o * len..(o + 1) * len];
            for (c, row) in block.chunks_mut(len).enumerate() {
                let kr = &k[(o * c_in + c) * filter..(o * c_in + c + 1) * filter];
                for (tap, &wv) in kr.iter().enumerate() {
                    let off = tap as isize - pad;
                    let (lo, hi) = tap_range(off, len);
                    let dst = &mut row[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (dv, &gv) in dst.iter_mut().zip(&gr[lo..hi]) {
                        *dv += wv * gv;
                    }
                }
            }
        }
    });
    let mut dk = vec![0.0; c_out * c_in * filter];
    par::for_each_chunk(&mut dk, c_in * filter, |o, block| {
        for b in 0..batch {
            let gr = &dy[(b * c_out + o) * len..(b * c_out + o + 1) * len];
            for c in 0..c_in {
                let xr = &x[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                for tap in 0..filter {
                    let off = tap as isize - pad;
                    let (lo, hi) = tap_range(off, len);
                    let src = &xr[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    let acc: f64 = gr[lo..hi].iter().zip(src).map(|(g, x)| g * x).sum();
                    block[c * filter + tap] += acc;
                }
            }
        }
    });
    let mut db = vec![0.0; c_out];
    for b in 0..batch {
        for (o, d) in db.iter_mut().enumerate() {
            *d += dy[(b * c_out + o) * len..(b * c_out + o + 1) * len]
                .iter()
                .sum::<f64>();
        }
    }
    ConvGrads { dx, dk, db }
}

/// Non-overlapping max over blocks of `pool` along the last axis.
/// Returns the pooled values and the flat input index of each maximum
/// (first occurrence wins on ties).
pub fn maxpool_forward(x: &[f64], rows: usize, len: usize, pool: usize) -> (Vec<f64>, Vec<usize>) {
    let out_len = len / pool;
    let mut out = Vec::with_capacity(rows * out_len);
    let mut arg = Vec::with_capacity(rows * out_len);
    for r in 0..rows {
        for j in 0..out_len {
            let start = r * len + j * pool;
            let mut best = start;
            for i in start + 1..start + pool {
                if x[i] > x[best] {
                    best = i;
                }
            }
            out.push(x[best]);
            arg.push(best);
        }
    }
    (out, arg)
}

pub fn maxpool_backward(dy: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i] += g;
    }
    dx
}

pub fn upscale_forward(x: &[f64], factor: usize) -> Vec<f64> {
    x.iter()
        .flat_map(|&v| std::iter::repeat_n(v, factor))
        .collect()
}

pub fn upscale_backward(dy: &[f64], factor: usize) -> Vec<f64> {
    dy.chunks(factor).map(|c| c.iter().sum()).collect()
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel statistics over `batch × len` elements of a `[batch, channels, len]` layout.
pub fn channel_moments(x: &[f64], batch: usize, channels: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (batch * len) as f64;
    let mut mean = vec![0.0; channels];
    for b in 0..batch {
        for (c, m) in mean.iter_mut().enumerate() {
            let s = (b * channels + c) * len;
            *m += x[s..s + len].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; channels];
    for b in 0..batch {
        for (c, v) in var.iter_mut().enumerate() {
            let s = (b * channels + c) * len;
            *v += x[s..s + len].iter().map(|&e| (e - mean[c]) * (e - mean[c])).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Returns `(y, xhat)` for normalisation with the given per-channel mean and
/// inverse standard deviation.
pub fn batchnorm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    inv_std: &[f64],
    channels: usize,
    len: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for (i, (&xv, (h, o))) in x.iter().zip(xhat.iter_mut().zip(y.iter_mut())).enumerate() {
        let c = (i / len) % channels;
        *h = (xv - mean[c]) * inv_std[c];
        *o = gamma[c] * *h + beta[c];
    }
    (y, xhat)
}

pub struct BatchNormGrads {
    pub dx: Vec<f64>,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

/// Backward pass; `batch_stats` selects the train-mode formula in which the
/// mean and variance depend on the input.
pub fn batchnorm_backward(
    dy: &[f64],
    xhat: &[f64],
    gamma: &[f64],
    inv_std: &[f64],
    channels: usize,
    len: usize,
    batch_stats: bool,
) -> BatchNormGrads {
    let n = (dy.len() / (channels * len) * len) as f64;
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for (i, (&g, &h)) in dy.iter().zip(xhat).enumerate() {
        let c = (i / len) % channels;
        dgamma[c] += g * h;
        dbeta[c] += g;
    }
    let dx = dy
        .iter()
        .zip(xhat)
        .enumerate()
        .map(|(i, (&g, &h))| {
            let c = (i / len) % channels;
            if batch_stats {
                // dxhat sums: Σ dxhat = γ·Σdy, Σ dxhat·xhat = γ·dγ
                gamma[c] * inv_std[c] / n * (n * g - dbeta[c] - h * dgamma[c])
            } else {
                gamma[c] * inv_std[c] * g
            }
        })
        .collect();
    BatchNormGrads { dx, dgamma, dbeta }
}
