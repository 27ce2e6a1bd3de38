use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seedable generator used throughout the simulator.
///
/// Identical seeds produce identical streams. Parallel work never shares an
/// instance: each worker gets a child from [`SimRng::derive`].
#[derive(Clone, Debug)]
pub struct SimRng(ChaCha8Rng);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Child generator keyed by `seed` and a path of stream keys, e.g.
    /// `(round, user)`. Independent of any parent's consumption state.
    pub fn derive(seed: u64, keys: &[u64]) -> Self {
        SimRng::new(derive_seed(seed, keys))
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    /// Uniform index in `0..n`. Panics when `n == 0`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn gaussian(&mut self, mean: f64, std_dev: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.0);
        mean + std_dev * z
    }

    /// Draw from Laplace(0, scale) by inverting the CDF. `scale` must be
    /// positive; callers validate through [`crate::numeric::laplace_sample`].
    pub(crate) fn laplace_unchecked(&mut self, scale: f64) -> f64 {
        let mut u = self.uniform();
        while u == 0.0 {
            u = self.uniform();
        }
        let centered = u - 0.5;
        -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
    }
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}
