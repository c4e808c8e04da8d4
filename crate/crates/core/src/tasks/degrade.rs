use rand::Rng;

use crate::error::Result;
use crate::gmm::GmmPolicy;
use crate::seed;
use crate::updates::{integrate, Bounds, Modality, UpdateSpec, UpdateVector};

/// Frozen seed for the default degradation.
pub const DEGRADE_SEED: u64 = 33;

/// Perturbs means by up to ±0.05·severity per entry and scales position
/// eigenvalues by factors in [1 − 0.1·severity, 1 + 0.1·severity].
pub fn degrade(policy: &GmmPolicy, severity: f64) -> Result<GmmPolicy> {
    degrade_with_seed(policy, severity, DEGRADE_SEED)
}

pub fn degrade_with_seed(policy: &GmmPolicy, severity: f64, seed: u64) -> Result<GmmPolicy> {
    if severity <= 0.0 {
        return Ok(policy.clone());
    }
    let bounds = Bounds { weights: 0.1, means: 0.05 * severity, cov: 0.1 * severity };
    let spec = UpdateSpec::new(&[Modality::Means, Modality::CovEig], bounds, 1e-3, policy.k(), policy.dim_s())?;
    let mut rng = seed::rng(seed, &[seed::stream::DEGRADE]);
    let values = (0..spec.dimension())
        .map(|i| {
            let b = spec.bound(i);
            rng.random_range(-b..=b)
        })
        .collect();
    integrate(policy, &UpdateVector::new_unchecked(spec, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn policy() -> GmmPolicy {
        let cov = DMatrix::<f64>::identity(6, 6) * 0.01;
        GmmPolicy::new(
            vec![0.5, 0.5],
            vec![DVector::zeros(6), DVector::from_element(6, 0.2)],
            vec![cov.clone(), cov],
        )
        .unwrap()
    }

    #[test]
    fn zero_severity_is_identity() {
        let p = policy();
        assert_eq!(degrade(&p, 0.0).unwrap(), p);
    }

    #[test]
    fn perturbations_respect_severity_bounds() {
        let p = policy();
        for severity in [0.5, 1.0, 2.0] {
            let q = degrade_with_seed(&p, severity, 17).unwrap();
            for c in 0..2 {
                let dm = &q.means()[c] - &p.means()[c];
                assert!(dm.amax() <= 0.05 * severity + 1e-15);
                let eig = q.sigma_s(c).symmetric_eigenvalues();
                for e in eig.iter() {
                    let f = e / 0.01;
                    assert!(f >= 1.0 - 0.1 * severity - 1e-9 && f <= 1.0 + 0.1 * severity + 1e-9);
                }
            }
            assert_eq!(q.weights(), p.weights());
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let p = policy();
        assert_eq!(degrade_with_seed(&p, 1.0, 5).unwrap(), degrade_with_seed(&p, 1.0, 5).unwrap());
        assert_ne!(degrade_with_seed(&p, 1.0, 5).unwrap(), degrade_with_seed(&p, 1.0, 6).unwrap());
    }
}
