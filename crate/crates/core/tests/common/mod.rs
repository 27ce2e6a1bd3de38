//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod gradcheck;

use ucfed_core::attack::auc;
use ucfed_core::filters::AttributeFilter;
use ucfed_core::numeric::{axpy, dot, l2_norm, Matrix};
use ucfed_core::SimRng;

pub const FD_STEP: f64 = 1e-6;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let denom = l2_norm(a).max(l2_norm(b));
    if denom < 1e-300 {
        0.0
    } else {
        l2_norm(&diff) / denom
    }
}

/// Central differences of `f` at `x`.
pub fn fd_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + FD_STEP;
            let up = f(&probe);
            probe[k] = x[k] - FD_STEP;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn gaussian_vec(rng: &mut SimRng, n: usize, sd: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gaussian(0.0, sd)).collect()
}

/// True when some hidden pre-activation for some input sits within `margin`
/// of the relu kink, where finite differences are unreliable.
pub fn near_kink(filter: &AttributeFilter, inputs: &[&[f64]], margin: f64) -> bool {
    inputs
        .iter()
        .any(|h| filter.forward_trace(h).unwrap().pre.iter().any(|p| p.abs() < margin))
}

/// AUC of an L2-regularised logistic regression fitted by full-batch
/// gradient descent on `train` rows and scored on `test` rows.
pub fn logistic_probe_auc(x: &Matrix, labels: &[usize], train: &[usize], test: &[usize]) -> f64 {
    let d = x.cols();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for &u in train {
        axpy(1.0 / n, x.row(u), &mut mean);
    }
    let mut sd = vec![0.0; d];
    for &u in train {
        for k in 0..d {
            sd[k] += (x.get(u, k) - mean[k]).powi(2) / n;
        }
    }
    let sd: Vec<f64> = sd.iter().map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    let z = |u: usize| -> Vec<f64> { (0..d).map(|k| (x.get(u, k) - mean[k]) / sd[k]).collect() };
    let zs: Vec<Vec<f64>> = train.iter().map(|&u| z(u)).collect();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let (lr, l2) = (0.5, 1e-2);
    for _ in 0..2000 {
        let mut gw: Vec<f64> = w.iter().map(|v| l2 * v).collect();
        let mut gb = 0.0;
        for (zu, &u) in zs.iter().zip(train) {
            let p = 1.0 / (1.0 + (-(dot(&w, zu) + b)).exp());
            let r = (p - labels[u] as f64) / n;
            axpy(r, zu, &mut gw);
            gb += r;
        }
        axpy(-lr, &gw, &mut w);
        b -= lr * gb;
    }
    let scores: Vec<f64> = test.iter().map(|&u| dot(&w, &z(u)) + b).collect();
    let truth: Vec<bool> = test.iter().map(|&u| labels[u] == 1).collect();
    auc(&scores, &truth).unwrap()
}
