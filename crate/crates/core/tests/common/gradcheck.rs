//! Finite-difference checks of every hand-derived gradient.

use super::{fd_gradient, gaussian_vec, near_kink, rel_err};
use ucfed_core::data::AttrMask;
use ucfed_core::filters::{joint_local_loss, privacy_loss, privacy_loss_and_gradient, AttributeFilter, PrivacyWeights};
use ucfed_core::recmodel::{bpr_gradients_vectors, bpr_loss_vectors, BprTriple};
use ucfed_core::{RecModel, SimRng};

pub fn random_filter(rng: &mut SimRng, classes: usize, hidden: usize, dim: usize) -> AttributeFilter {
    let mut f = AttributeFilter::random("t", classes, hidden, dim, 1.5, rng);
    for t in f.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gaussian(0.0, 0.05);
        }
    }
    f
}

/// Worst relative error of BPR gradients over `instances` random draws.
pub fn bpr_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = SimRng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let d = 1 + rng.index(12);
        let (u, i, j) = (gaussian_vec(&mut rng, d, 1.0), gaussian_vec(&mut rng, d, 1.0), gaussian_vec(&mut rng, d, 1.0));
        let g = bpr_gradients_vectors(&u, &i, &j);
        worst = worst.max(rel_err(&g.user, &fd_gradient(&u, |x| bpr_loss_vectors(x, &i, &j))));
        worst = worst.max(rel_err(&g.pos, &fd_gradient(&i, |x| bpr_loss_vectors(&u, x, &j))));
        worst = worst.max(rel_err(&g.neg, &fd_gradient(&j, |x| bpr_loss_vectors(&u, &i, x))));
    }
    worst
}

/// Worst relative error of filter cross-entropy gradients (all four
/// tensors) over `instances` kink-free draws.
pub fn filter_ce_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = SimRng::new(seed);
    let (mut done, mut rejected, mut worst) = (0, 0, 0.0f64);
    while done < instances {
        let (c, hdim, d) = (2 + rng.index(5), 1 + rng.index(8), 1 + rng.index(6));
        let filter = random_filter(&mut rng, c, hdim, d);
        let n = 1 + rng.index(4);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(&mut rng, d, 1.0)).collect();
        let ys: Vec<usize> = (0..n).map(|_| rng.index(c)).collect();
        let batch: Vec<(&[f64], usize)> = xs.iter().map(|x| x.as_slice()).zip(ys.iter().copied()).collect();
        let inputs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        if near_kink(&filter, &inputs, 1e-3) {
            rejected += 1;
            continue;
        }
        let (_, grads) = filter.ce_gradients(&batch).unwrap();
        for (k, analytic) in grads.iter().enumerate() {
            let base = filter.tensors()[k].to_vec();
            let numeric = fd_gradient(&base, |p| {
                let mut g = filter.clone();
                g.tensors_mut()[k].copy_from_slice(p);
                g.ce_gradients(&batch).unwrap().0
            });
            worst = worst.max(rel_err(analytic, &numeric));
        }
        done += 1;
    }
    assert!(rejected < 10 * instances, "too many kink rejections: {rejected}");
    worst
}

/// Worst relative error of privacy gradients over `instances` kink-free draws.
pub fn privacy_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = SimRng::new(seed);
    let (mut done, mut worst) = (0, 0.0f64);
    while done < instances {
        let (c, hdim, d) = (2 + rng.index(20), 1 + rng.index(16), 1 + rng.index(10));
        let filter = random_filter(&mut rng, c, hdim, d);
        let h = gaussian_vec(&mut rng, d, 1.0);
        if near_kink(&filter, &[&h], 1e-3) {
            continue;
        }
        let (_, g) = privacy_loss_and_gradient(&filter, &h).unwrap();
        if g.iter().all(|v| *v == 0.0) {
            // every hidden unit inactive; nothing to compare
            continue;
        }
        let numeric = fd_gradient(&h, |x| privacy_loss(&filter, x).unwrap());
        worst = worst.max(rel_err(&g, &numeric));
        done += 1;
    }
    worst
}

/// Worst relative error of the joint objective's user gradient.
pub fn joint_worst(instances: usize, seed: u64) -> f64 {
    let mut rng = SimRng::new(seed);
    let (mut done, mut worst) = (0, 0.0f64);
    while done < instances {
        let d = 2 + rng.index(6);
        let mut model = RecModel::new(2, 6, d, &mut rng);
        for v in model.user_mut(0).iter_mut() {
            *v = rng.gaussian(0.0, 1.0);
        }
        for i in 0..6 {
            for v in model.item_mut(i).iter_mut() {
                *v = rng.gaussian(0.0, 1.0);
            }
        }
        let filters = vec![random_filter(&mut rng, 2, 5, d), random_filter(&mut rng, 4, 5, d)];
        if near_kink(&filters[0], &[model.user(0)], 1e-3) || near_kink(&filters[1], &[model.user(0)], 1e-3) {
            continue;
        }
        let triples = vec![BprTriple { user: 0, pos: 1, neg: 4 }, BprTriple { user: 0, pos: 2, neg: 5 }];
        let mask = AttrMask::from_ids([0, 1]);
        let w = PrivacyWeights::new(rng.uniform()).unwrap();
        let j = joint_local_loss(&model, &filters, &triples, 0, mask, &w).unwrap();
        let e_u = model.user(0).to_vec();
        let numeric = fd_gradient(&e_u, |x| {
            let mut m = model.clone();
            m.user_mut(0).copy_from_slice(x);
            joint_local_loss(&m, &filters, &triples, 0, mask, &w).unwrap().loss
        });
        worst = worst.max(rel_err(&j.user_grad, &numeric));
        done += 1;
    }
    worst
}
