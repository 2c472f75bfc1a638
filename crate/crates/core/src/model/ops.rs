//! Dense kernels and their adjoints. Matrices are row-major; a weight of shape
//! `[out, in]` maps an `in`-vector to an `out`-vector.

use alloc::vec;
use alloc::vec::Vec;

pub(crate) const LN_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = x Wᵀ + b` for `n` rows.
pub(crate) fn linear(x: &[f64], n: usize, w: &[f64], b: Option<&[f64]>, out: usize) -> Vec<f64> {
    let inp = w.len() / out;
    debug_assert_eq!(x.len(), n * inp);
    let mut y = vec![0.0; n * out];
    for i in 0..n {
        let xi = &x[i * inp..(i + 1) * inp];
        let yi = &mut y[i * out..(i + 1) * out];
        for (o, yo) in yi.iter_mut().enumerate() {
            *yo = dot(xi, &w[o * inp..(o + 1) * inp]) + b.map_or(0.0, |b| b[o]);
        }
    }
    y
}

/// Accumulates `dW += dyᵀ x`, `db += Σ dy` and returns `dx = dy W`.
pub(crate) fn linear_backward(
    x: &[f64],
    n: usize,
    w: &[f64],
    out: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) -> Vec<f64> {
    let inp = w.len() / out;
    let mut dx = vec![0.0; n * inp];
    for i in 0..n {
        let xi = &x[i * inp..(i + 1) * inp];
        let dxi = &mut dx[i * inp..(i + 1) * inp];
        for o in 0..out {
            let g = dy[i * out + o];
            if g == 0.0 {
                continue;
            }
            axpy(g, &w[o * inp..(o + 1) * inp], dxi);
            axpy(g, xi, &mut dw[o * inp..(o + 1) * inp]);
        }
    }
    if let Some(db) = db {
        for i in 0..n {
            axpy(1.0, &dy[i * out..(i + 1) * out], db);
        }
    }
    dx
}

pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / libm::sqrt(var + LN_EPS);
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * gamma[j] + beta[j];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    d: usize,
    gamma: &[f64],
    cache: &LayerNormCache,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let n = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        for j in 0..d {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
            dxhat[j] = dyr[j] * gamma[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dot(&dxhat, xh) / d as f64;
        for j in 0..d {
            dx[i * d + j] = cache.rstd[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * FRAC_1_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| libm::exp(l - max)).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `log Σ exp(logits)`.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + libm::log(logits.iter().map(|&l| libm::exp(l - max)).sum::<f64>())
}

/// Softmax adjoint: `ds = p ⊙ (dp − ⟨dp, p⟩)`.
pub(crate) fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(pi, dpi)| pi * (dpi - inner)).collect()
}
