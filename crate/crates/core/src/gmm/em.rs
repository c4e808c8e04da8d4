//! Expectation maximization for full-covariance joint GMMs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{Gaussian, GmmPolicy};
use crate::error::{Error, Result};
use crate::seed;
use crate::trajectory::{finite_difference_velocities, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Stop once the mean per-sample log-likelihood gains less than this.
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    /// Ridge added to every covariance, relative to `trace(cov(data)) / dim`.
    pub reg_scale: f64,
    pub max_condition: f64,
    /// Lloyd iterations after k-means++ seeding.
    pub kmeans_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            restarts: 5,
            reg_scale: 1e-6,
            max_condition: 1e12,
            kmeans_iter: 10,
        }
    }
}

/// Log-likelihood history of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Mean per-sample log-likelihood after each E-step, one list per restart.
    pub restarts: Vec<Vec<f64>>,
    /// Index of the restart that was kept.
    pub best: usize,
    pub converged: bool,
}

impl FitTrace {
    pub fn best_log_likelihood(&self) -> f64 {
        *self.restarts[self.best].last().unwrap()
    }
}

/// Pools `(s, ṡ)` samples, with `ṡ` taken from finite differences of `s`.
pub fn joint_samples(trajectories: &[Trajectory]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    let mut dim = None;
    for (i, t) in trajectories.iter().enumerate() {
        if t.steps.len() < 2 {
            return Err(Error::InsufficientData { samples: t.steps.len(), k: 2 });
        }
        t.validate()?;
        let d = t.steps[0].s.len();
        if *dim.get_or_insert(d) != d {
            return Err(Error::Invariant(format!("trajectory {i} has state dimension {d}")));
        }
        for (st, v) in t.steps.iter().zip(finite_difference_velocities(&t.steps)) {
            let mut x = st.s.clone();
            x.extend(v);
            out.push(x);
        }
    }
    Ok(out)
}

pub fn fit_em(trajectories: &[Trajectory], k: usize, seed: u64, config: &EmConfig) -> Result<GmmPolicy> {
    if trajectories.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let samples = joint_samples(trajectories)?;
    fit_em_traced(&samples, k, seed, config).map(|(p, _)| p)
}

#[derive(Debug, Clone)]
struct Params {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

struct Dataset<'a> {
    x: &'a [Vec<f64>],
    dim: usize,
    reg: f64,
    global_var: DVector<f64>,
}

impl<'a> Dataset<'a> {
    fn new(x: &'a [Vec<f64>], reg_scale: f64) -> Result<Self> {
        let dim = x[0].len();
        if dim == 0 || x.iter().any(|r| r.len() != dim) {
            return Err(Error::Invariant("samples must share a non-zero dimension".into()));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("samples contain non-finite values".into()));
        }
        let n = x.len() as f64;
        let mean = DVector::from_fn(dim, |j, _| x.iter().map(|r| r[j]).sum::<f64>() / n);
        let global_var =
            DVector::from_fn(dim, |j, _| x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n);
        let reg = reg_scale * global_var.sum() / dim as f64;
        Ok(Self { x, dim, reg, global_var })
    }

    fn n(&self) -> usize {
        self.x.len()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kmeans_init<R: Rng>(data: &Dataset, k: usize, lloyd: usize, rng: &mut R) -> Params {
    let x = data.x;
    let n = x.len();
    let mut centers: Vec<Vec<f64>> = vec![x[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = x.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(x[idx].clone());
        for (d, r) in d2.iter_mut().zip(x) {
            *d = d.min(sq_dist(r, &centers[centers.len() - 1]));
        }
    }

    let mut labels = vec![0usize; n];
    for iter in 0..=lloyd {
        let mut changed = false;
        for (i, r) in x.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(r, &centers[a]).total_cmp(&sq_dist(r, &centers[b])))
                .unwrap();
            if best != labels[i] || iter == 0 {
                changed |= best != labels[i];
                labels[i] = best;
            }
        }
        if iter > 0 && !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = x.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(r, _)| r).collect();
            if !members.is_empty() {
                let m = members.len() as f64;
                for j in 0..data.dim {
                    center[j] = members.iter().map(|r| r[j]).sum::<f64>() / m;
                }
            }
        }
    }

    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for (c, center) in centers.iter().enumerate() {
        let members: Vec<&Vec<f64>> = x.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(r, _)| r).collect();
        let m = members.len();
        weights.push(m.max(1) as f64);
        means.push(DVector::from_row_slice(center));
        let var = if m >= 2 {
            DVector::from_fn(data.dim, |j, _| {
                members.iter().map(|r| (r[j] - center[j]).powi(2)).sum::<f64>() / m as f64
            })
        } else {
            data.global_var.clone()
        };
        covs.push(DMatrix::from_diagonal(&var.add_scalar(data.reg)));
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Params { weights, means, covs }
}

pub(crate) fn mean_log_likelihood(comps: &[Gaussian], weights: &[f64], samples: &[Vec<f64>]) -> f64 {
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut row = vec![0.0; comps.len()];
    let total: f64 = samples
        .iter()
        .map(|x| {
            for (r, (g, lw)) in row.iter_mut().zip(comps.iter().zip(&log_w)) {
                *r = lw + g.log_pdf(x);
            }
            log_sum_exp(&row)
        })
        .sum();
    total / samples.len() as f64
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// E-step: responsibilities (n × k, row-major) and per-sample log-likelihoods.
fn e_step(data: &Dataset, p: &Params) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = p.weights.len();
    let comps = gaussians(p)?;
    let log_w: Vec<f64> = p.weights.iter().map(|w| w.ln()).collect();
    let mut resp = vec![0.0; data.n() * k];
    let mut sample_ll = Vec::with_capacity(data.n());
    for (i, x) in data.x.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        for (c, r) in row.iter_mut().enumerate() {
            *r = log_w[c] + comps[c].log_pdf(x);
        }
        let lse = log_sum_exp(row);
        for r in row.iter_mut() {
            *r = (*r - lse).exp();
        }
        sample_ll.push(lse);
    }
    Ok((resp, sample_ll))
}

fn gaussians(p: &Params) -> Result<Vec<Gaussian>> {
    p.means
        .iter()
        .zip(&p.covs)
        .enumerate()
        .map(|(c, (m, s))| {
            Gaussian::new(m.clone(), s).ok_or(Error::DegenerateComponent {
                component: c,
                condition: f64::INFINITY,
            })
        })
        .collect()
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn m_step(data: &Dataset, resp: &[f64], sample_ll: &[f64], k: usize, config: &EmConfig) -> Result<Params> {
    let n = data.n();
    let dim = data.dim;
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    let mut reseeded = vec![false; n];
    for c in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
        if nk < 1e-8 * n as f64 {
            // Re-seed at the worst-explained sample not already taken.
            let worst = (0..n)
                .filter(|i| !reseeded[*i])
                .min_by(|&a, &b| sample_ll[a].total_cmp(&sample_ll[b]))
                .unwrap_or(0);
            reseeded[worst] = true;
            weights.push(1.0 / n as f64);
            means.push(DVector::from_row_slice(&data.x[worst]));
            covs.push(DMatrix::from_diagonal(&data.global_var.add_scalar(data.reg)));
            continue;
        }
        let mut mean = DVector::zeros(dim);
        for (i, x) in data.x.iter().enumerate() {
            let r = resp[i * k + c];
            for j in 0..dim {
                mean[j] += r * x[j];
            }
        }
        mean /= nk;
        let mut cov = DMatrix::zeros(dim, dim);
        let mut d = vec![0.0; dim];
        for (i, x) in data.x.iter().enumerate() {
            let r = resp[i * k + c];
            if r == 0.0 {
                continue;
            }
            for j in 0..dim {
                d[j] = x[j] - mean[j];
            }
            for a in 0..dim {
                let ra = r * d[a];
                for b in a..dim {
                    cov[(a, b)] += ra * d[b];
                }
            }
        }
        for a in 0..dim {
            for b in a..dim {
                let v = cov[(a, b)] / nk;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
            cov[(a, a)] += data.reg;
        }
        let cond = condition_number(&cov);
        if !(cond <= config.max_condition) {
            return Err(Error::DegenerateComponent { component: c, condition: cond });
        }
        weights.push(nk / n as f64);
        means.push(mean);
        covs.push(cov);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Params { weights, means, covs })
}

fn run_em(data: &Dataset, init: Params, config: &EmConfig) -> Result<(Params, Vec<f64>, bool)> {
    let k = init.weights.len();
    let mut params = init;
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    for iter in 0..=config.max_iter {
        let (resp, sample_ll) = e_step(data, &params)?;
        let ll = sample_ll.iter().sum::<f64>() / data.n() as f64;
        if !ll.is_finite() {
            return Err(Error::DegenerateComponent { component: 0, condition: f64::INFINITY });
        }
        let gain = history.last().map(|prev| ll - prev);
        history.push(ll);
        if matches!(gain, Some(g) if g < config.tol) {
            converged = true;
            break;
        }
        if iter == config.max_iter {
            break;
        }
        params = m_step(data, &resp, &sample_ll, k, config)?;
    }
    Ok((params, history, converged))
}

fn into_policy(p: Params) -> Result<GmmPolicy> {
    GmmPolicy::new(p.weights, p.means, p.covs)
}

/// Fits a `k`-component joint GMM with seeded k-means++ restarts.
pub fn fit_em_traced(
    samples: &[Vec<f64>],
    k: usize,
    seed: u64,
    config: &EmConfig,
) -> Result<(GmmPolicy, FitTrace)> {
    if k == 0 || samples.len() < k {
        return Err(Error::InsufficientData { samples: samples.len(), k });
    }
    let data = Dataset::new(samples, config.reg_scale)?;
    if data.dim % 2 != 0 {
        return Err(Error::Invariant(format!("joint dimension {} is odd", data.dim)));
    }
    let mut traces = Vec::new();
    let mut best: Option<(usize, f64, Params)> = None;
    let mut first_err = None;
    for r in 0..config.restarts.max(1) {
        let mut rng = seed::rng(seed, &[seed::stream::EM, r as u64]);
        let init = kmeans_init(&data, k, config.kmeans_iter, &mut rng);
        match run_em(&data, init, config) {
            Ok((params, history, converged)) => {
                let ll = *history.last().unwrap();
                if best.as_ref().map_or(true, |(_, b, _)| ll > *b) {
                    best = Some((traces.len(), ll, params));
                }
                traces.push((history, converged));
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((best_idx, _, params)) = best else {
        return Err(first_err.unwrap());
    };
    let trace = FitTrace {
        converged: traces[best_idx].1,
        restarts: traces.into_iter().map(|t| t.0).collect(),
        best: best_idx,
    };
    Ok((into_policy(params)?, trace))
}

/// Runs EM starting from an existing policy's parameters.
/// Makes a joint covariance positive definite without changing its regression.
///
/// Updates that touch only the position block can leave the joint matrix
/// indefinite. The velocity block is rebuilt from the regression term plus
/// the Schur complement with eigenvalues clamped to at least `floor`.
pub fn repair_joint(cov: &DMatrix<f64>, dim_s: usize, floor: f64) -> DMatrix<f64> {
    if cov.clone().cholesky().is_some() {
        return cov.clone();
    }
    let d = dim_s;
    let s = cov.view((0, 0), (d, d)).into_owned();
    let vs = cov.view((d, 0), (d, d)).into_owned();
    let v = cov.view((d, d), (d, d)).into_owned();
    let Some(s_inv) = s.clone().cholesky().map(|c| c.inverse()) else {
        return cov.clone();
    };
    let explained = &vs * &s_inv * vs.transpose();
    let schur = &v - &explained;
    let schur = 0.5 * (&schur + schur.transpose());
    let eig = schur.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|l| l.max(floor.max(f64::MIN_POSITIVE)));
    let schur = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    let mut out = cov.clone();
    let block = explained + schur;
    out.view_mut((d, d), (d, d)).copy_from(&(0.5 * (&block + block.transpose())));
    out
}

pub fn fit_em_warm(samples: &[Vec<f64>], init: &GmmPolicy, config: &EmConfig) -> Result<(GmmPolicy, FitTrace)> {
    if samples.len() < init.k() {
        return Err(Error::InsufficientData { samples: samples.len(), k: init.k() });
    }
    let data = Dataset::new(samples, config.reg_scale)?;
    if data.dim != 2 * init.dim_s() {
        return Err(Error::DimensionMismatch { expected: 2 * init.dim_s(), actual: data.dim });
    }
    let start = Params {
        weights: init.weights().to_vec(),
        means: init.means().to_vec(),
        covs: init.covariances().iter().map(|c| repair_joint(c, init.dim_s(), data.reg)).collect(),
    };
    let (params, history, converged) = run_em(&data, start, config)?;
    Ok((into_policy(params)?, FitTrace { restarts: vec![history], best: 0, converged }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Step;
    use rand_distr::{Distribution, StandardNormal};

    /// Samples from a mixture given per-component means and Cholesky factors.
    pub(crate) fn sample_mixture(
        weights: &[f64],
        means: &[DVector<f64>],
        chols: &[DMatrix<f64>],
        n: usize,
        seed: u64,
    ) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(seed, &[]);
        let dim = means[0].len();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut c = 0;
                let mut acc = weights[0];
                while u > acc && c + 1 < weights.len() {
                    c += 1;
                    acc += weights[c];
                }
                let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
                (&means[c] + &chols[c] * z).iter().cloned().collect()
            })
            .collect()
    }

    fn two_blob(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let m1 = DVector::from_row_slice(&[0.0, 0.0]);
        let m2 = DVector::from_row_slice(&[3.0, 1.0]);
        let l1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.4, 0.6]);
        let l2 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, -0.2, 0.8]);
        sample_mixture(&[0.4, 0.6], &[m1, m2], &[l1, l2], n, seed)
    }

    #[test]
    fn log_likelihood_never_decreases() {
        for s in 0..5 {
            let x = two_blob(300, s);
            let (_, trace) = fit_em_traced(&x, 3, s, &EmConfig::default()).unwrap();
            for h in &trace.restarts {
                for w in h.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "decrease {} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn constant_velocity_line_recovers_velocity() {
        let steps: Vec<Step> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.05;
                Step { t, s: vec![0.2 * t, -0.1 * t, 0.5], s_dot: vec![0.0; 3] }
            })
            .collect();
        let traj = Trajectory { task_id: "line".into(), seed: 0, steps, success: true };
        let p = fit_em(&[traj], 1, 3, &EmConfig::default()).unwrap();
        let mu = &p.means()[0];
        assert!((mu[3] - 0.2).abs() < 1e-6);
        assert!((mu[4] + 0.1).abs() < 1e-6);
        assert!(mu[5].abs() < 1e-6);
    }

    #[test]
    fn too_many_components_is_insufficient_data() {
        let x = two_blob(4, 0);
        assert!(matches!(
            fit_em_traced(&x, 5, 0, &EmConfig::default()),
            Err(Error::InsufficientData { samples: 4, k: 5 })
        ));
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let x = vec![vec![1.0, 2.0]; 10];
        assert!(matches!(
            fit_em_traced(&x, 1, 0, &EmConfig::default()),
            Err(Error::DegenerateComponent { .. })
        ));
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let x = two_blob(200, 11);
        let a = fit_em_traced(&x, 2, 5, &EmConfig::default()).unwrap();
        let b = fit_em_traced(&x, 2, 5, &EmConfig::default()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn repair_keeps_regression_and_restores_definiteness() {
        let mut cov = DMatrix::<f64>::identity(6, 6) * 0.1;
        for i in 0..3 {
            cov[(i + 3, i)] = 0.09;
            cov[(i, i + 3)] = 0.09;
        }
        // Shrinking the position block makes the joint matrix indefinite.
        cov.view_mut((0, 0), (3, 3)).copy_from(&(DMatrix::<f64>::identity(3, 3) * 0.05));
        assert!(cov.clone().cholesky().is_none());
        let fixed = repair_joint(&cov, 3, 1e-6);
        assert!(fixed.clone().cholesky().is_some());
        assert_eq!(fixed.view((0, 0), (3, 6)), cov.view((0, 0), (3, 6)));
        assert!((&fixed - fixed.transpose()).amax() == 0.0);
        let ok = DMatrix::<f64>::identity(6, 6);
        assert_eq!(repair_joint(&ok, 3, 1e-6), ok);
    }

    #[test]
    fn warm_start_continues_from_given_parameters() {
        let x = two_blob(200, 2);
        let (p, _) = fit_em_traced(&x, 2, 0, &EmConfig::default()).unwrap();
        let cfg = EmConfig { max_iter: 20, ..EmConfig::default() };
        let (q, trace) = fit_em_warm(&x, &p, &cfg).unwrap();
        assert!(trace.restarts[0].len() <= 21);
        assert!(q.mean_log_likelihood(&x).unwrap() >= p.mean_log_likelihood(&x).unwrap() - 1e-9);
    }
}
