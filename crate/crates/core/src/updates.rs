//! Bounded low-dimensional update space for GMM policies.
//!
//! An [`UpdateVector`] is a flat vector laid out component-major: for each
//! component `k` it holds `[Δω^k | Δμ^k | ΔΣ^k]`, where each block is present
//! only if its modality is enabled. Covariance entries are stored centered:
//! scaling modalities apply `1 + entry`, rotations read entries as radians.
//! [`integrate`] applies an update and returns a new, re-validated policy.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Weights,
    Means,
    /// Scale the eigenvalues of `Σ_s`.
    CovEig,
    /// Rotate the cross block `Σ_ṡs` by XYZ Euler angles.
    CovRot,
    /// Rank-1 rescaling of the off-diagonal part of `Σ_s`.
    CovRank1,
}

impl Modality {
    pub fn is_covariance(self) -> bool {
        matches!(self, Modality::CovEig | Modality::CovRot | Modality::CovRank1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bounds {
    pub weights: f64,
    pub means: f64,
    /// σ: scaling factors live in `[1 − σ, 1 + σ]`, angles in `[−σ, σ]`.
    pub cov: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { weights: 0.1, means: 0.05, cov: 0.1 }
    }
}

/// Which parts of a policy an update touches, and how far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSpec {
    modalities: Vec<Modality>,
    pub bounds: Bounds,
    pub epsilon: f64,
    pub k: usize,
    pub dim_s: usize,
}

/// What a single flat-vector entry controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Weight { component: usize },
    Mean { component: usize, axis: usize },
    Cov { component: usize, axis: usize },
}

impl UpdateSpec {
    pub fn new(modalities: &[Modality], bounds: Bounds, epsilon: f64, k: usize, dim_s: usize) -> Result<Self> {
        let mut mods = modalities.to_vec();
        mods.sort();
        mods.dedup();
        if mods.is_empty() {
            return Err(Error::Config("update spec needs at least one modality".into()));
        }
        if mods.iter().filter(|m| m.is_covariance()).count() > 1 {
            return Err(Error::Config("at most one covariance modality per update".into()));
        }
        if !(bounds.weights > 0.0 && bounds.means > 0.0 && bounds.cov > 0.0) {
            return Err(Error::Config("update bounds must be strictly positive".into()));
        }
        if bounds.cov >= 1.0 {
            return Err(Error::Config("covariance bound σ must be below 1".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config("weight floor ε must lie in (0, 1)".into()));
        }
        if k == 0 || dim_s == 0 {
            return Err(Error::Config("k and dim_s must be positive".into()));
        }
        if mods.contains(&Modality::CovRot) && dim_s != 3 {
            return Err(Error::RotationDim(dim_s));
        }
        Ok(Self { modalities: mods, bounds, epsilon, k, dim_s })
    }

    /// Spec with default bounds and ε matched to a policy.
    pub fn for_policy(policy: &GmmPolicy, modalities: &[Modality]) -> Result<Self> {
        Self::new(modalities, Bounds::default(), 1e-3, policy.k(), policy.dim_s())
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn has(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    pub fn cov_modality(&self) -> Option<Modality> {
        self.modalities.iter().copied().find(|m| m.is_covariance())
    }

    fn per_component(&self) -> usize {
        usize::from(self.has(Modality::Weights))
            + 2 * self.dim_s * usize::from(self.has(Modality::Means))
            + self.dim_s * usize::from(self.cov_modality().is_some())
    }

    /// Length of the flat update vector.
    pub fn dimension(&self) -> usize {
        self.k * self.per_component()
    }

    pub fn slot(&self, index: usize) -> Slot {
        let per = self.per_component();
        let component = index / per;
        let mut r = index % per;
        if self.has(Modality::Weights) {
            if r == 0 {
                return Slot::Weight { component };
            }
            r -= 1;
        }
        if self.has(Modality::Means) {
            if r < 2 * self.dim_s {
                return Slot::Mean { component, axis: r };
            }
            r -= 2 * self.dim_s;
        }
        Slot::Cov { component, axis: r }
    }

    /// Symmetric bound of entry `index`.
    pub fn bound(&self, index: usize) -> f64 {
        match self.slot(index) {
            Slot::Weight { .. } => self.bounds.weights,
            Slot::Mean { .. } => self.bounds.means,
            Slot::Cov { .. } => self.bounds.cov,
        }
    }

    pub fn bound_vector(&self) -> Vec<f64> {
        (0..self.dimension()).map(|i| self.bound(i)).collect()
    }

    fn offset(&self, component: usize) -> usize {
        component * self.per_component()
    }
}

/// Flat dimension of an update space.
pub fn dimension(spec: &UpdateSpec) -> usize {
    spec.dimension()
}

/// Short modality names used on the command line: `mu`, `eig`, `rxyz`, `rank1`, `w`, joined by `+`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalitySet(pub Vec<Modality>);

impl FromStr for ModalitySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = Vec::new();
        for tok in s.split('+') {
            out.push(match tok.trim() {
                "w" | "weights" => Modality::Weights,
                "mu" | "means" => Modality::Means,
                "eig" => Modality::CovEig,
                "rxyz" => Modality::CovRot,
                "rank1" => Modality::CovRank1,
                other => return Err(Error::Config(format!("unknown modality '{other}'"))),
            });
        }
        Ok(Self(out))
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .0
            .iter()
            .map(|m| match m {
                Modality::Weights => "w",
                Modality::Means => "mu",
                Modality::CovEig => "eig",
                Modality::CovRot => "rxyz",
                Modality::CovRank1 => "rank1",
            })
            .collect();
        write!(f, "{}", names.join("+"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateVector {
    pub spec: UpdateSpec,
    pub values: Vec<f64>,
}

impl UpdateVector {
    /// Builds an update, rejecting entries outside their modality bound.
    pub fn new(spec: UpdateSpec, values: Vec<f64>) -> Result<Self> {
        let v = Self::new_unchecked(spec, values)?;
        v.check_bounds()?;
        Ok(v)
    }

    /// Like [`UpdateVector::new`] but only checks the length.
    pub fn new_unchecked(spec: UpdateSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.dimension() {
            return Err(Error::DimensionMismatch { expected: spec.dimension(), actual: values.len() });
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: UpdateSpec) -> Self {
        let n = spec.dimension();
        Self { spec, values: vec![0.0; n] }
    }

    pub fn check_bounds(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            let b = self.spec.bound(i);
            if !v.is_finite() || v.abs() > b {
                return Err(Error::OutOfBounds { index: i, value: *v, bound: b });
            }
        }
        Ok(())
    }

    pub fn weight_delta(&self, component: usize) -> Option<f64> {
        self.spec
            .has(Modality::Weights)
            .then(|| self.values[self.spec.offset(component)])
    }

    pub fn mean_delta(&self, component: usize) -> Option<&[f64]> {
        if !self.spec.has(Modality::Means) {
            return None;
        }
        let start = self.spec.offset(component) + usize::from(self.spec.has(Modality::Weights));
        Some(&self.values[start..start + 2 * self.spec.dim_s])
    }

    pub fn cov_entries(&self, component: usize) -> Option<&[f64]> {
        self.spec.cov_modality()?;
        let start = self.spec.offset(component) + self.spec.per_component() - self.spec.dim_s;
        Some(&self.values[start..start + self.spec.dim_s])
    }
}

/// Floored, renormalized weight update.
pub fn apply_weights(weights: &[f64], delta: &[f64], epsilon: f64) -> Vec<f64> {
    let floored: Vec<f64> = weights
        .iter()
        .zip(delta)
        .map(|(w, d)| (w + d).max(epsilon))
        .collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|w| w / total).collect()
}

/// Additive update of full joint means.
pub fn apply_means(means: &[DVector<f64>], deltas: &[&[f64]]) -> Vec<DVector<f64>> {
    means
        .iter()
        .zip(deltas)
        .map(|(m, d)| m + DVector::from_row_slice(d))
        .collect()
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted descending.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let q = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| eig.eigenvectors[(i, order[j])]);
    let l = DVector::from_fn(m.nrows(), |j, _| eig.eigenvalues[order[j]]);
    (q, l)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `Q (Λ · diag(factors)) Qᵀ` with eigenvalues paired to factors in descending order.
pub fn apply_cov_eig(sigma_s: &DMatrix<f64>, factors: &[f64]) -> Result<DMatrix<f64>> {
    let n = sigma_s.nrows();
    if factors.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: factors.len() });
    }
    if sigma_s.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    let (q, l) = sorted_eigen(sigma_s);
    let scaled = DVector::from_fn(n, |j, _| l[j] * factors[j]);
    Ok(symmetrize(&(&q * DMatrix::from_diagonal(&scaled) * q.transpose())))
}

/// `R_x(α) R_y(β) R_z(γ)`.
pub fn rotation_xyz(angles: &[f64]) -> Matrix3<f64> {
    let (a, b, c) = (angles[0], angles[1], angles[2]);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos());
    let ry = Matrix3::new(b.cos(), 0.0, b.sin(), 0.0, 1.0, 0.0, -b.sin(), 0.0, b.cos());
    let rz = Matrix3::new(c.cos(), -c.sin(), 0.0, c.sin(), c.cos(), 0.0, 0.0, 0.0, 1.0);
    rx * ry * rz
}

/// Left-multiplies the cross block `Σ_ṡs` by a 3×3 rotation.
pub fn apply_cov_rot_matrix(sigma_vs: &DMatrix<f64>, rotation: &Matrix3<f64>) -> Result<DMatrix<f64>> {
    if sigma_vs.nrows() != 3 || sigma_vs.ncols() != 3 {
        return Err(Error::RotationDim(sigma_vs.nrows()));
    }
    let r = DMatrix::from_fn(3, 3, |i, j| rotation[(i, j)]);
    Ok(r * sigma_vs)
}

pub fn apply_cov_rot(sigma_vs: &DMatrix<f64>, angles: &[f64]) -> Result<DMatrix<f64>> {
    if angles.len() != 3 {
        return Err(Error::RotationDim(angles.len()));
    }
    apply_cov_rot_matrix(sigma_vs, &rotation_xyz(angles))
}

/// `diag(Σ) + U₁ s₁ (V₁ ∘ factors)ᵀ` from the SVD of the off-diagonal part.
///
/// The result is generally not symmetric.
pub fn apply_cov_rank1(sigma: &DMatrix<f64>, factors: &[f64]) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    if factors.len() != n || sigma.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: factors.len() });
    }
    let diag = DMatrix::from_diagonal(&sigma.diagonal());
    let off = sigma - &diag;
    let svd = off.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let top = (0..svd.singular_values.len())
        .max_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .unwrap();
    let s1 = svd.singular_values[top];
    let u1 = u.column(top);
    let v1 = DVector::from_fn(n, |i, _| vt[(top, i)] * factors[i]);
    Ok(diag + (u1 * s1) * v1.transpose())
}

/// Applies `update` to `policy`, returning a new validated policy.
pub fn integrate(policy: &GmmPolicy, update: &UpdateVector) -> Result<GmmPolicy> {
    let spec = &update.spec;
    if spec.k != policy.k() {
        return Err(Error::DimensionMismatch { expected: policy.k(), actual: spec.k });
    }
    if spec.dim_s != policy.dim_s() {
        return Err(Error::DimensionMismatch { expected: policy.dim_s(), actual: spec.dim_s });
    }
    let k = policy.k();
    let d = policy.dim_s();

    let weights = if spec.has(Modality::Weights) {
        let delta: Vec<f64> = (0..k).map(|c| update.weight_delta(c).unwrap()).collect();
        apply_weights(policy.weights(), &delta, spec.epsilon)
    } else {
        policy.weights().to_vec()
    };

    let means = if spec.has(Modality::Means) {
        let deltas: Vec<&[f64]> = (0..k).map(|c| update.mean_delta(c).unwrap()).collect();
        apply_means(policy.means(), &deltas)
    } else {
        policy.means().to_vec()
    };

    let mut covariances = policy.covariances().to_vec();
    if let Some(modality) = spec.cov_modality() {
        for (c, cov) in covariances.iter_mut().enumerate() {
            let entries = update.cov_entries(c).unwrap();
            match modality {
                Modality::CovEig => {
                    let factors: Vec<f64> = entries.iter().map(|e| 1.0 + e).collect();
                    let sigma_s = apply_cov_eig(&policy.sigma_s(c), &factors)?;
                    cov.view_mut((0, 0), (d, d)).copy_from(&sigma_s);
                }
                Modality::CovRot => {
                    let rotated = apply_cov_rot(&policy.sigma_vs(c), entries)?;
                    cov.view_mut((d, 0), (d, d)).copy_from(&rotated);
                    cov.view_mut((0, d), (d, d)).copy_from(&rotated.transpose());
                }
                Modality::CovRank1 => {
                    let factors: Vec<f64> = entries.iter().map(|e| 1.0 + e).collect();
                    let updated = symmetrize(&apply_cov_rank1(&policy.sigma_s(c), &factors)?);
                    if updated.clone().cholesky().is_none() {
                        return Err(Error::Rank1Rejected(c));
                    }
                    cov.view_mut((0, 0), (d, d)).copy_from(&updated);
                }
                _ => unreachable!(),
            }
        }
    }

    GmmPolicy::new(weights, means, covariances)
}
