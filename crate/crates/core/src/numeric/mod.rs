//! Dense kernels, losses, activations, noise sampling and the SGD update.
//!
//! Everything is `f64`. Logarithm and ratio arguments are floored at
//! [`PROB_FLOOR`] so losses stay finite on saturated predictions.

mod matrix;
mod rng;

pub use matrix::{axpy, dot, l2_norm, Matrix};
pub use rng::{derive_seed, SimRng};

use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::dim("softmax of an empty vector"));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)`, branching on sign so neither tail overflows.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `-ln pred[label]`, floored.
pub fn cross_entropy(pred: &[f64], label: usize) -> Result<f64> {
    let p = pred.get(label).ok_or_else(|| {
        Error::Index(format!("label {label} for {} classes", pred.len()))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// `KL(p ‖ q)` with `q` floored. Terms with `p_k = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim(format!(
            "kl_divergence over lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk.max(PROB_FLOOR) / qk.max(PROB_FLOOR)).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&pk| pk > 0.0)
        .map(|&pk| pk * pk.max(PROB_FLOOR).ln())
        .sum::<f64>()
}

pub fn laplace_sample(rng: &mut SimRng, scale: f64) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::param(format!("laplace scale must be > 0, got {scale}")));
    }
    Ok(rng.laplace_unchecked(scale))
}

/// Rescale `g` onto the L2 ball of radius `bound` when it lies outside.
pub fn l2_clip(g: &[f64], bound: f64) -> Result<Vec<f64>> {
    if !(bound > 0.0) {
        return Err(Error::param(format!("clip bound must be > 0, got {bound}")));
    }
    let norm = l2_norm(g);
    if norm <= bound {
        return Ok(g.to_vec());
    }
    let factor = bound / norm;
    Ok(g.iter().map(|v| v * factor).collect())
}

/// `params - lr * grad`.
pub fn sgd_step(params: &Matrix, grad: &Matrix, lr: f64) -> Result<Matrix> {
    if params.shape() != grad.shape() {
        return Err(Error::dim(format!(
            "sgd_step: params {:?} vs grad {:?}",
            params.shape(),
            grad.shape()
        )));
    }
    if lr < 0.0 {
        return Err(Error::param(format!("learning rate must be >= 0, got {lr}")));
    }
    let mut out = params.clone();
    sgd_update(out.as_mut_slice(), grad.as_slice(), lr);
    Ok(out)
}

/// In-place `params -= lr * grad`.
#[inline]
pub fn sgd_update(params: &mut [f64], grad: &[f64], lr: f64) {
    axpy(-lr, grad, params);
}
