//! Batch normalization kernels. Statistics accumulate in f64.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch statistics: biased variance for normalization,
/// unbiased variance for the running estimate.
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

pub fn batch_stats<T: Real>(shape: Shape, x: &[T]) -> Result<BatchStats> {
    let count = shape.n * shape.plane();
    if count < 2 {
        return Err(Error::DegenerateStats { count });
    }
    let plane = shape.plane();
    let mut mean = vec![0.0; shape.c];
    let mut var = vec![0.0; shape.c];
    for c in 0..shape.c {
        let mut s = 0.0;
        for n in 0..shape.n {
            let base = (n * shape.c + c) * plane;
            s += x[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let m = s / count as f64;
        let mut q = 0.0;
        for n in 0..shape.n {
            let base = (n * shape.c + c) * plane;
            q += x[base..base + plane].iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
        }
        mean[c] = m;
        var[c] = q / count as f64;
    }
    let var_unbiased = var.iter().map(|v| v * count as f64 / (count - 1) as f64).collect();
    Ok(BatchStats { mean, var, var_unbiased })
}

/// `y = gamma * (x - mean) * inv_std + beta`, per channel.
pub fn affine_forward<T: Real>(shape: Shape, x: &[T], mean: &[T], inv_std: &[T], gamma: &[T], beta: &[T]) -> (Vec<T>, Vec<T>) {
    let plane = shape.plane();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for n in 0..shape.n {
        for c in 0..shape.c {
            let base = (n * shape.c + c) * plane;
            let (m, s, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for i in base..base + plane {
                let h = (x[i] - m) * s;
                xhat[i] = h;
                y[i] = g * h + b;
            }
        }
    }
    (y, xhat)
}

/// Sums of `dy` and `dy * xhat` per channel.
fn channel_sums<T: Real>(shape: Shape, dy: &[T], xhat: &[T]) -> (Vec<f64>, Vec<f64>) {
    let plane = shape.plane();
    let mut sdy = vec![0.0; shape.c];
    let mut sdyx = vec![0.0; shape.c];
    for n in 0..shape.n {
        for c in 0..shape.c {
            let base = (n * shape.c + c) * plane;
            for i in base..base + plane {
                sdy[c] += dy[i].as_f64();
                sdyx[c] += (dy[i] * xhat[i]).as_f64();
            }
        }
    }
    (sdy, sdyx)
}

pub struct NormGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

/// Adjoint of the train-mode transform, where mean and variance depend on `x`.
pub fn train_backward<T: Real>(shape: Shape, dy: &[T], xhat: &[T], inv_std: &[T], gamma: &[T]) -> NormGrads<T> {
    let plane = shape.plane();
    let count = (shape.n * plane) as f64;
    let (sdy, sdyx) = channel_sums(shape, dy, xhat);
    let mut dx = vec![T::zero(); dy.len()];
    for n in 0..shape.n {
        for c in 0..shape.c {
            let base = (n * shape.c + c) * plane;
            let k = gamma[c] * inv_std[c];
            let mdy = T::lit(sdy[c] / count);
            let mdyx = T::lit(sdyx[c] / count);
            for i in base..base + plane {
                dx[i] = k * (dy[i] - mdy - xhat[i] * mdyx);
            }
        }
    }
    NormGrads {
        dx,
        dgamma: sdyx.into_iter().map(T::lit).collect(),
        dbeta: sdy.into_iter().map(T::lit).collect(),
    }
}

/// Adjoint of the eval-mode transform, a fixed per-channel affine map.
pub fn eval_backward<T: Real>(shape: Shape, dy: &[T], xhat: &[T], inv_std: &[T], gamma: &[T]) -> NormGrads<T> {
    let plane = shape.plane();
    let (sdy, sdyx) = channel_sums(shape, dy, xhat);
    let mut dx = vec![T::zero(); dy.len()];
    for n in 0..shape.n {
        for c in 0..shape.c {
            let base = (n * shape.c + c) * plane;
            let k = gamma[c] * inv_std[c];
            for i in base..base + plane {
                dx[i] = k * dy[i];
            }
        }
    }
    NormGrads {
        dx,
        dgamma: sdyx.into_iter().map(T::lit).collect(),
        dbeta: sdy.into_iter().map(T::lit).collect(),
    }
}
