//! Random-forest regression surrogate.
//!
//! Trees split on variance reduction over a random feature subset and grow
//! until leaves are pure or hit `min_samples_leaf`. The forest's spread across
//! trees is the uncertainty estimate.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    /// Fraction of features considered at each split.
    pub feature_subsample: f64,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 40,
            min_samples_leaf: 1,
            feature_subsample: 0.8,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 2 {
            return Err(Error::Config("forest needs at least two trees".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return Err(Error::Config("feature_subsample must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

struct Builder<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    min_leaf: usize,
    n_features: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn mean(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64
    }

    fn best_split(&self, idx: &[usize], features: &[usize]) -> Option<BestSplit> {
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mut best: Option<BestSplit> = None;
        let mut order = idx.to_vec();
        for &f in features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += self.y[order[pos]];
                let nl = pos + 1;
                let nr = n - nl;
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let lo = self.x[order[pos]][f];
                let hi = self.x[order[pos + 1]][f];
                if lo >= hi {
                    continue;
                }
                // SSE reduction up to a constant: Σl²/nl + Σr²/nr − Σ²/n
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64
                    - total * total / n as f64;
                if best.as_ref().map_or(true, |b| gain > b.gain) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(BestSplit { feature: f, threshold, gain });
                }
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.mean(&idx)));
        let first = self.y[idx[0]];
        if idx.len() < 2 * self.min_leaf || idx.iter().all(|&i| self.y[i] == first) {
            return id;
        }
        let dim = self.x[0].len();
        let mut features: Vec<usize> = (0..dim).collect();
        features.shuffle(self.rng);
        features.truncate(self.n_features);
        let split = self.best_split(&idx, &features).or_else(|| {
            let all: Vec<usize> = (0..dim).collect();
            self.best_split(&idx, &all)
        });
        let Some(split) = split else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[i][split.feature] <= split.threshold);
        let left = self.build(l);
        let right = self.build(r);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

/// Fitted forest over costs.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    dim: usize,
}

impl Forest {
    pub fn fit(x: &[Vec<f64>], y: &[f64], config: &ForestConfig) -> Result<Self> {
        config.validate()?;
        if x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), actual: y.len() });
        }
        let dim = x[0].len();
        if let Some(bad) = x.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, actual: bad.len() });
        }
        let n_features = ((config.feature_subsample * dim as f64).round() as usize).clamp(1, dim.max(1));
        let n = x.len();
        let trees = (0..config.n_trees)
            .map(|t| {
                let mut rng = seed::rng(config.seed, &[seed::stream::FOREST, t as u64]);
                let idx: Vec<usize> = if config.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut b = Builder {
                    x,
                    y,
                    min_leaf: config.min_samples_leaf,
                    n_features,
                    rng: &mut rng,
                    nodes: Vec::new(),
                };
                b.build(idx);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Self { trees, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn tree_predictions(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: x.len() });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).collect())
    }

    /// Mean and population standard deviation across trees.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok(mean_std(&self.tree_predictions(x)?))
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}
