//! Shared fixtures for the criterion benches.

use ucfed_core::data::{generate_synthetic, Synthetic, SyntheticParams};
use ucfed_core::SimRng;

/// Synthetic population used by the round benches.
pub fn fixture(users: usize, items: usize, seed: u64) -> Synthetic {
    let params = SyntheticParams { users, items, ..SyntheticParams::default() };
    generate_synthetic(&params, &mut SimRng::new(seed)).expect("fixture parameters are valid")
}

/// Deterministic dense vector with entries in [-1, 1).
pub fn vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = SimRng::new(seed);
    (0..len).map(|_| 2.0 * rng.uniform() - 1.0).collect()
}
