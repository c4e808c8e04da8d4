use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::GmmPolicy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelMeta {
    pub seed: u64,
    /// Tool and version that produced the file; not a wall-clock time so refits stay byte-identical.
    pub created: String,
    pub source_demos: String,
}

/// On-disk JSON layout of a policy. Covariances are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub k: usize,
    pub dim_s: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    pub meta: ModelMeta,
}

impl ModelFile {
    pub fn from_policy(policy: &GmmPolicy, meta: ModelMeta) -> Self {
        Self {
            k: policy.k(),
            dim_s: policy.dim_s(),
            weights: policy.weights().to_vec(),
            means: policy.means().iter().map(|m| m.iter().cloned().collect()).collect(),
            covariances: policy
                .covariances()
                .iter()
                .map(|c| c.transpose().iter().cloned().collect())
                .collect(),
            meta,
        }
    }

    pub fn into_policy(self) -> Result<GmmPolicy> {
        let joint = 2 * self.dim_s;
        if self.weights.len() != self.k || self.means.len() != self.k || self.covariances.len() != self.k {
            return Err(Error::Invariant(format!("file declares k = {} but arrays disagree", self.k)));
        }
        let means = self
            .means
            .iter()
            .map(|m| {
                if m.len() != joint {
                    return Err(Error::DimensionMismatch { expected: joint, actual: m.len() });
                }
                Ok(DVector::from_row_slice(m))
            })
            .collect::<Result<Vec<_>>>()?;
        let covariances = self
            .covariances
            .iter()
            .map(|c| {
                if c.len() != joint * joint {
                    return Err(Error::DimensionMismatch { expected: joint * joint, actual: c.len() });
                }
                Ok(DMatrix::from_row_slice(joint, joint, c))
            })
            .collect::<Result<Vec<_>>>()?;
        GmmPolicy::new(self.weights, means, covariances)
    }
}

pub fn save_model(policy: &GmmPolicy, meta: ModelMeta, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&ModelFile::from_policy(policy, meta))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(GmmPolicy, ModelMeta)> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Malformed(e.to_string()))?;
    let meta = file.meta.clone();
    Ok((file.into_policy()?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy() -> GmmPolicy {
        let mut c = DMatrix::<f64>::identity(6, 6) * 0.7;
        c[(3, 0)] = 0.1 / 3.0;
        c[(0, 3)] = 0.1 / 3.0;
        GmmPolicy::new(
            vec![0.3, 0.7],
            vec![DVector::from_fn(6, |i, _| i as f64 * 0.1 + 1e-17), DVector::from_element(6, std::f64::consts::PI)],
            vec![c, DMatrix::identity(6, 6)],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let p = policy();
        save_model(&p, ModelMeta::default(), &path).unwrap();
        let (q, _) = load_model(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn load_rejects_bad_weights_and_asymmetry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut f = ModelFile::from_policy(&policy(), ModelMeta::default());
        f.weights = vec![0.2, 0.7];
        fs::write(&path, serde_json::to_string(&f).unwrap()).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Invariant(_))));

        let mut f = ModelFile::from_policy(&policy(), ModelMeta::default());
        f.covariances[1][1] = 0.01;
        fs::write(&path, serde_json::to_string(&f).unwrap()).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Invariant(_))));

        fs::write(&path, "{\"k\": 1").unwrap();
        assert!(matches!(load_model(&path), Err(Error::Malformed(_))));
    }
}
