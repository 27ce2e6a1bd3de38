use crate::error::{Error, Result};
use crate::numeric::{l2_clip, l2_norm, laplace_sample, SimRng};

/// Clip-then-noise applied to every parameter group before upload.
///
/// Each coordinate receives Laplace noise of scale `2·clip/ε`. With
/// `noise = false` (or `ε = ∞`) only the clip is applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LdpMechanism {
    pub clip: f64,
    pub epsilon: f64,
    pub noise: bool,
}

/// A perturbed group plus the norm it had after clipping, before noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbed {
    pub values: Vec<f64>,
    pub prenoise_norm: f64,
}

impl LdpMechanism {
    pub fn new(clip: f64, epsilon: f64, noise: bool) -> Result<Self> {
        if !(clip > 0.0) {
            return Err(Error::param(format!("clip bound must be > 0, got {clip}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::param(format!("privacy budget must be > 0, got {epsilon}")));
        }
        Ok(LdpMechanism { clip, epsilon, noise })
    }

    /// Laplace scale `2·clip/ε`, zero when noise is disabled.
    pub fn noise_scale(&self) -> f64 {
        if self.noise {
            2.0 * self.clip / self.epsilon
        } else {
            0.0
        }
    }

    pub fn perturb(&self, delta: &[f64], rng: &mut SimRng) -> Result<Perturbed> {
        let mut values = l2_clip(delta, self.clip)?;
        let prenoise_norm = l2_norm(&values);
        let scale = self.noise_scale();
        if scale > 0.0 {
            for v in &mut values {
                *v += laplace_sample(rng, scale)?;
            }
        }
        Ok(Perturbed { values, prenoise_norm })
    }
}

/// `l2_clip(delta, clip)` plus per-coordinate Laplace(0, 2·clip/ε) noise.
/// `ε = ∞` yields the clipped delta unchanged.
pub fn ldp_perturb(delta: &[f64], clip: f64, epsilon: f64, rng: &mut SimRng) -> Result<Vec<f64>> {
    Ok(LdpMechanism::new(clip, epsilon, true)?.perturb(delta, rng)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_budget_only_clips() {
        let delta = vec![3.0, 4.0];
        let out = ldp_perturb(&delta, 0.5, f64::INFINITY, &mut SimRng::new(0)).unwrap();
        assert!((out[0] - 0.3).abs() < 1e-15 && (out[1] - 0.4).abs() < 1e-15);
        let m = LdpMechanism::new(0.5, 1.0, false).unwrap();
        assert_eq!(m.perturb(&[0.1, 0.2], &mut SimRng::new(0)).unwrap().values, vec![0.1, 0.2]);
    }

    #[test]
    fn clip_norm_before_noise() {
        let delta: Vec<f64> = vec![10.0 / 2f64.sqrt(); 2];
        let m = LdpMechanism::new(0.5, 1.0, true).unwrap();
        let p = m.perturb(&delta, &mut SimRng::new(1)).unwrap();
        assert!((p.prenoise_norm - 0.5).abs() < 1e-12);
        assert_ne!(l2_norm(&p.values), 0.5);
    }

    #[test]
    fn noise_scale_matches_two_clip_over_epsilon() {
        // δ = 0.5, ε = 1 -> λ = 1; E|noise| = λ, sd of |noise| = λ.
        let n = 100_000;
        let zero = vec![0.0; n];
        let out = ldp_perturb(&zero, 0.5, 1.0, &mut SimRng::new(2)).unwrap();
        let mad = out.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        let se = 1.0 / (n as f64).sqrt();
        assert!((mad - 1.0).abs() <= 3.0 * se, "mad {mad}");
        assert_eq!(LdpMechanism::new(0.5, 1.0, true).unwrap().noise_scale(), 1.0);
    }

    #[test]
    fn invalid_parameters() {
        let mut rng = SimRng::new(3);
        assert!(matches!(ldp_perturb(&[1.0], 0.0, 1.0, &mut rng), Err(Error::Parameter(_))));
        assert!(matches!(ldp_perturb(&[1.0], 1.0, 0.0, &mut rng), Err(Error::Parameter(_))));
        assert!(ldp_perturb(&[1.0], 1.0, f64::NAN, &mut rng).is_err());
    }
}
