use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::forest::{mean_std, Forest};
use crate::error::Result;

/// Floor added to costs before taking logs.
pub const LOG_COST_FLOOR: f64 = 1e-3;

/// Expected improvement below `best_cost` for a Gaussian prediction.
pub fn expected_improvement(mean: f64, std: f64, best_cost: f64) -> f64 {
    let gap = best_cost - mean;
    if std <= 0.0 {
        return gap.max(0.0);
    }
    let n = Normal::standard();
    let z = gap / std;
    (gap * n.cdf(z) + std * n.pdf(z)).max(0.0)
}

pub fn log_cost(c: f64) -> f64 {
    (c + LOG_COST_FLOOR).ln()
}

/// Expected improvement of the forest at `x`, optionally on log-transformed costs.
///
/// The log variant transforms each tree's prediction before taking the
/// cross-tree mean and spread, and transforms `best_cost` the same way.
pub fn acquisition(forest: &Forest, x: &[f64], best_cost: f64, log_variant: bool) -> Result<f64> {
    let mut preds = forest.tree_predictions(x)?;
    let best = if log_variant {
        preds.iter_mut().for_each(|p| *p = log_cost(*p));
        log_cost(best_cost)
    } else {
        best_cost
    };
    let (mean, std) = mean_std(&preds);
    Ok(expected_improvement(mean, std, best))
}
