//! Gaussian mixture dynamical-system policies.
//!
//! A [`GmmPolicy`] holds `k` Gaussians over the joint `(s, ṡ)` space. Velocity
//! inference conditions each component on `s` and blends the per-component
//! affine predictions by their responsibilities.

mod em;
mod io;

pub use em::{fit_em, fit_em_traced, fit_em_warm, joint_samples, repair_joint, EmConfig, FitTrace};
pub use io::{load_model, save_model, ModelFile, ModelMeta};

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance used for the weight-sum and symmetry invariants.
pub const INVARIANT_TOL: f64 = 1e-9;

/// Multivariate normal with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub(crate) struct Gaussian {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub(crate) fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Option<Self> {
        let chol = cov.clone().cholesky()?;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        if !log_det.is_finite() {
            return None;
        }
        let dim = mean.len() as f64;
        Some(Self {
            mean,
            precision: chol.inverse(),
            log_norm: -0.5 * (dim * (2.0 * PI).ln() + log_det),
        })
    }

    pub(crate) fn log_pdf(&self, x: &[f64]) -> f64 {
        let n = self.mean.len();
        let mut quad = 0.0;
        for i in 0..n {
            let di = x[i] - self.mean[i];
            let mut row = 0.0;
            for j in 0..n {
                row += self.precision[(i, j)] * (x[j] - self.mean[j]);
            }
            quad += di * row;
        }
        self.log_norm - 0.5 * quad
    }
}

/// Conditional model of one component: `ṡ ≈ A s + b`, gated by `N(s; μ_s, Σ_s)`.
#[derive(Debug, Clone)]
struct Conditional {
    gate: Gaussian,
    log_weight: f64,
    gain: DMatrix<f64>,
    offset: DVector<f64>,
}

/// Gaussian mixture policy over the joint state/velocity space.
#[derive(Debug)]
pub struct GmmPolicy {
    dim_s: usize,
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    conditionals: Vec<Conditional>,
    fallbacks: AtomicU64,
}

impl Clone for GmmPolicy {
    fn clone(&self) -> Self {
        Self {
            dim_s: self.dim_s,
            weights: self.weights.clone(),
            means: self.means.clone(),
            covariances: self.covariances.clone(),
            conditionals: self.conditionals.clone(),
            fallbacks: AtomicU64::new(0),
        }
    }
}

impl PartialEq for GmmPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.dim_s == other.dim_s
            && self.weights == other.weights
            && self.means == other.means
            && self.covariances == other.covariances
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

impl GmmPolicy {
    /// Builds a policy and checks every invariant.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Invariant("policy needs at least one component".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::Invariant(format!(
                "component count mismatch: {} weights, {} means, {} covariances",
                k,
                means.len(),
                covariances.len()
            )));
        }
        let joint = means[0].len();
        if joint == 0 || joint % 2 != 0 {
            return Err(Error::Invariant(format!("joint dimension {joint} is not 2·dim_s")));
        }
        let dim_s = joint / 2;

        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Invariant("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > INVARIANT_TOL {
            return Err(Error::Invariant(format!("weights sum to {total}, expected 1")));
        }

        let mut conditionals = Vec::with_capacity(k);
        for (idx, (mu, cov)) in means.iter().zip(&covariances).enumerate() {
            if mu.len() != joint {
                return Err(Error::DimensionMismatch { expected: joint, actual: mu.len() });
            }
            if cov.nrows() != joint || cov.ncols() != joint {
                return Err(Error::DimensionMismatch { expected: joint, actual: cov.nrows() });
            }
            if mu.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!("component {idx} has non-finite entries")));
            }
            let asym = max_asymmetry(cov);
            if asym > INVARIANT_TOL {
                return Err(Error::Invariant(format!(
                    "covariance {idx} is not symmetric (max deviation {asym:e})"
                )));
            }
            let sigma_s = cov.view((0, 0), (dim_s, dim_s)).into_owned();
            let sigma_vs = cov.view((dim_s, 0), (dim_s, dim_s)).into_owned();
            let mu_s = mu.rows(0, dim_s).into_owned();
            let mu_v = mu.rows(dim_s, dim_s).into_owned();
            let gate = Gaussian::new(mu_s.clone(), &sigma_s).ok_or_else(|| {
                Error::Invariant(format!("position block of component {idx} is not positive definite"))
            })?;
            let gain = &sigma_vs * &gate.precision;
            let offset = mu_v - &gain * mu_s;
            conditionals.push(Conditional {
                gate,
                log_weight: weights[idx].ln(),
                gain,
                offset,
            });
        }

        Ok(Self {
            dim_s,
            weights,
            means,
            covariances,
            conditionals,
            fallbacks: AtomicU64::new(0),
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim_s(&self) -> usize {
        self.dim_s
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Position block `Σ_s` of component `k`.
    pub fn sigma_s(&self, k: usize) -> DMatrix<f64> {
        self.covariances[k].view((0, 0), (self.dim_s, self.dim_s)).into_owned()
    }

    /// Cross block `Σ_ṡs` of component `k` (rows indexed by velocity).
    pub fn sigma_vs(&self, k: usize) -> DMatrix<f64> {
        self.covariances[k]
            .view((self.dim_s, 0), (self.dim_s, self.dim_s))
            .into_owned()
    }

    /// Linear gain `A^k = Σ_ṡs Σ_s⁻¹` of component `k`.
    pub fn gain(&self, k: usize) -> &DMatrix<f64> {
        &self.conditionals[k].gain
    }

    /// Offset `b^k = μ_ṡ − A^k μ_s` of component `k`.
    pub fn offset(&self, k: usize) -> &DVector<f64> {
        &self.conditionals[k].offset
    }

    /// Number of queries that fell back to uniform responsibilities.
    pub fn fallback_count(&self) -> u64 {
        self.fallbacks.load(Ordering::Relaxed)
    }

    fn check_state(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.dim_s {
            return Err(Error::DimensionMismatch { expected: self.dim_s, actual: s.len() });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite state {s:?}")));
        }
        Ok(())
    }

    /// Log of the normalized responsibilities `h^k(s)`.
    pub fn log_responsibilities(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_state(s)?;
        let mut logs: Vec<f64> = self
            .conditionals
            .iter()
            .map(|c| c.log_weight + c.gate.log_pdf(s))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            self.fallbacks.fetch_add(1, Ordering::Relaxed);
            let uniform = -(self.k() as f64).ln();
            return Ok(vec![uniform; self.k()]);
        }
        let norm = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for l in &mut logs {
            *l -= norm;
        }
        Ok(logs)
    }

    /// Responsibilities `h^k(s)`, summing to one.
    pub fn responsibilities(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_responsibilities(s)?.into_iter().map(f64::exp).collect())
    }

    /// Affine prediction `A^k s + b^k` of a single component.
    pub fn component_velocity(&self, k: usize, s: &[f64]) -> Vec<f64> {
        let c = &self.conditionals[k];
        (0..self.dim_s)
            .map(|i| c.offset[i] + (0..self.dim_s).map(|j| c.gain[(i, j)] * s[j]).sum::<f64>())
            .collect()
    }

    /// Gaussian mixture regression: expected velocity at state `s`.
    pub fn gmr(&self, s: &[f64]) -> Result<Vec<f64>> {
        let h = self.responsibilities(s)?;
        let mut out = vec![0.0; self.dim_s];
        for (k, hk) in h.iter().enumerate() {
            if *hk == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.component_velocity(k, s)) {
                *o += hk * v;
            }
        }
        Ok(out)
    }

    /// Mean log-likelihood per joint sample.
    pub fn mean_log_likelihood(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let comps = self.joint_gaussians()?;
        Ok(em::mean_log_likelihood(&comps, &self.weights, samples))
    }

    pub(crate) fn joint_gaussians(&self) -> Result<Vec<Gaussian>> {
        self.means
            .iter()
            .zip(&self.covariances)
            .enumerate()
            .map(|(k, (m, c))| {
                Gaussian::new(m.clone(), c).ok_or(Error::DegenerateComponent {
                    component: k,
                    condition: f64::INFINITY,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(mu: [f64; 6], cov: DMatrix<f64>) -> GmmPolicy {
        GmmPolicy::new(vec![1.0], vec![DVector::from_row_slice(&mu)], vec![cov]).unwrap()
    }

    #[test]
    fn constant_field_without_cross_covariance() {
        let p = single([0.0, 0.0, 0.0, 1.0, 0.0, 0.0], DMatrix::identity(6, 6));
        for s in [[0.0, 0.0, 0.0], [3.0, -2.0, 1.0], [-10.0, 4.0, 7.5]] {
            let v = p.gmr(&s).unwrap();
            assert_eq!(v, vec![1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn negative_identity_cross_block_attracts_to_origin() {
        let mut cov = DMatrix::<f64>::identity(6, 6) * 2.0;
        for i in 0..3 {
            cov[(i, i)] = 1.0;
            cov[(i + 3, i)] = -1.0;
            cov[(i, i + 3)] = -1.0;
        }
        let p = single([0.0; 6], cov);
        let s = [0.3, -1.2, 2.0];
        let v = p.gmr(&s).unwrap();
        for i in 0..3 {
            assert!((v[i] + s[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mirrored_components_split_evenly() {
        let mut m1 = DVector::zeros(6);
        m1[0] = 0.7;
        m1[1] = 0.2;
        let mut m2 = m1.clone();
        m2[0] = -0.7;
        let mut c1 = DMatrix::<f64>::identity(6, 6);
        c1[(0, 1)] = 0.3;
        c1[(1, 0)] = 0.3;
        let mut c2 = c1.clone();
        c2[(0, 1)] = -0.3;
        c2[(1, 0)] = -0.3;
        let p = GmmPolicy::new(vec![0.5, 0.5], vec![m1, m2], vec![c1, c2]).unwrap();
        let lr = p.log_responsibilities(&[0.0, 1.3, -0.4]).unwrap();
        assert!((lr[0] - 0.5f64.ln()).abs() < 1e-12);
        assert!((lr[1] - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_component_has_zero_log_responsibility() {
        let p = single([0.0; 6], DMatrix::identity(6, 6));
        assert_eq!(p.log_responsibilities(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn far_field_is_dominated_by_nearest_component() {
        let mut m1 = DVector::zeros(6);
        m1[0] = 1.0;
        let mut m2 = DVector::zeros(6);
        m2[0] = -1.0;
        let p = GmmPolicy::new(
            vec![0.5, 0.5],
            vec![m1, m2],
            vec![DMatrix::identity(6, 6), DMatrix::identity(6, 6)],
        )
        .unwrap();
        // log ratio = 2·x for unit covariances at (x, 0, 0)
        let h = p.responsibilities(&[20.0, 0.0, 0.0]).unwrap();
        assert!(h[0] > 0.999);
    }

    #[test]
    fn rejects_invalid_states() {
        let p = single([0.0; 6], DMatrix::identity(6, 6));
        assert!(matches!(p.gmr(&[f64::NAN, 0.0, 0.0]), Err(Error::InvalidState(_))));
        assert!(matches!(p.gmr(&[0.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_broken_invariants() {
        let mu = DVector::zeros(6);
        let err = GmmPolicy::new(vec![0.9], vec![mu.clone()], vec![DMatrix::identity(6, 6)]);
        assert!(matches!(err, Err(Error::Invariant(_))));
        let mut cov = DMatrix::<f64>::identity(6, 6);
        cov[(0, 1)] = 0.1;
        let err = GmmPolicy::new(vec![1.0], vec![mu.clone()], vec![cov]);
        assert!(matches!(err, Err(Error::Invariant(_))));
        let mut cov = DMatrix::<f64>::identity(6, 6);
        cov[(2, 2)] = -1.0;
        let err = GmmPolicy::new(vec![1.0], vec![mu], vec![cov]);
        assert!(matches!(err, Err(Error::Invariant(_))));
    }

    #[test]
    fn underflowing_densities_fall_back_to_uniform() {
        let mut m1 = DVector::zeros(6);
        m1[0] = 1.0;
        let p = GmmPolicy::new(
            vec![0.5, 0.5],
            vec![m1, DVector::zeros(6)],
            vec![DMatrix::identity(6, 6), DMatrix::identity(6, 6)],
        )
        .unwrap();
        let h = p.responsibilities(&[1e200, 0.0, 0.0]).unwrap();
        assert_eq!(h, vec![0.5, 0.5]);
        assert_eq!(p.fallback_count(), 1);
    }
}
