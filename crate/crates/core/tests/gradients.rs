//! Analytic gradients against central finite differences.

mod common;

use common::gradcheck::{bpr_worst, filter_ce_worst, joint_worst, privacy_worst};

const INSTANCES: usize = 100;
const TOL: f64 = 1e-5;

#[test]
fn bpr_gradients_match_finite_differences() {
    let worst = bpr_worst(INSTANCES, 101);
    assert!(worst <= TOL, "worst relative error {worst:e}");
}

#[test]
fn filter_ce_gradients_match_finite_differences() {
    let worst = filter_ce_worst(INSTANCES, 102);
    assert!(worst <= TOL, "worst relative error {worst:e}");
}

#[test]
fn privacy_gradients_match_finite_differences() {
    let worst = privacy_worst(INSTANCES, 103);
    assert!(worst <= TOL, "worst relative error {worst:e}");
}

#[test]
fn joint_user_gradient_matches_finite_differences() {
    let worst = joint_worst(INSTANCES, 104);
    assert!(worst <= TOL, "worst relative error {worst:e}");
}
