//! Policy rollouts and averaged sparse-reward evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmPolicy;
use crate::seed;
use crate::surrogate::{Objective, Observation};
use crate::tasks::{reset, EnvInstance, Status, TaskSpec};
use crate::trajectory::{Step, Trajectory};
use crate::updates::{integrate, UpdateVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub dt: f64,
    pub max_steps: usize,
    /// Velocity 2-norm limit applied to the policy output.
    pub v_max: f64,
    /// Episodes averaged per evaluation.
    pub episodes: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { dt: 0.05, max_steps: 400, v_max: 0.5, episodes: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub reward: f64,
    /// The state left the finite range and the episode was cut short.
    pub aborted: bool,
}

pub fn clip_norm(v: &mut [f64], limit: f64) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > limit {
        let f = limit / n;
        v.iter_mut().for_each(|x| *x *= f);
    }
}

/// Runs `policy` from the environment's start state with explicit Euler steps.
pub fn rollout(policy: &GmmPolicy, mut env: EnvInstance, config: &RolloutConfig, seed: u64) -> Result<Rollout> {
    let task_id = env.spec().task_id.clone();
    let mut s = env.start().to_vec();
    let mut steps = Vec::with_capacity(config.max_steps + 1);
    let mut success = false;
    let mut aborted = false;
    for n in 0..config.max_steps {
        let mut v = policy.gmr(&s)?;
        clip_norm(&mut v, config.v_max);
        let next: Vec<f64> = s.iter().zip(&v).map(|(x, d)| x + config.dt * d).collect();
        steps.push(Step { t: n as f64 * config.dt, s: std::mem::replace(&mut s, next), s_dot: v });
        if s.iter().any(|x| !x.is_finite()) {
            aborted = true;
            break;
        }
        if env.step(&s) == Status::Success {
            success = true;
            break;
        }
    }
    if !aborted {
        let t = steps.len() as f64 * config.dt;
        steps.push(Step { t, s, s_dot: vec![0.0; steps[0].s_dot.len()] });
    }
    let reward = if success { 1.0 } else { 0.0 };
    Ok(Rollout { trajectory: Trajectory { task_id, seed, steps, success }, reward, aborted })
}

/// Seed of episode `episode` within evaluation `index` of a run.
pub fn episode_seed(run_seed: u64, index: usize, episode: usize) -> u64 {
    seed::derive(run_seed, &[seed::stream::EPISODE, index as u64, episode as u64])
}

/// Mean return over `config.episodes` seeded episodes; trajectories are returned alongside.
pub fn evaluate_policy(
    policy: &GmmPolicy,
    task: &TaskSpec,
    config: &RolloutConfig,
    run_seed: u64,
    index: usize,
) -> Result<(f64, Vec<Rollout>)> {
    let rollouts = (0..config.episodes)
        .map(|ep| {
            let s = episode_seed(run_seed, index, ep);
            rollout(policy, reset(task, s), config, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = rollouts.iter().map(|r| r.reward).sum::<f64>() / config.episodes.max(1) as f64;
    Ok((mean, rollouts))
}

/// Integrates `update` into `policy` and evaluates it; a rejected update scores zero.
pub fn evaluate_update(
    policy: &GmmPolicy,
    update: &UpdateVector,
    task: &TaskSpec,
    config: &RolloutConfig,
    run_seed: u64,
    index: usize,
) -> Result<Observation> {
    let (mean_return, rejected) = match integrate(policy, update) {
        Ok(p) => (evaluate_policy(&p, task, config, run_seed, index)?.0, false),
        Err(Error::Rank1Rejected(_)) => (0.0, true),
        Err(e) => return Err(e),
    };
    Ok(Observation { update: update.clone(), mean_return, episodes: config.episodes, run_index: index, rejected })
}

/// Sparse-reward task objective around a fixed base policy.
pub struct EpisodeObjective<'a> {
    pub policy: &'a GmmPolicy,
    pub task: &'a TaskSpec,
    pub config: RolloutConfig,
    pub seed: u64,
}

impl Objective for EpisodeObjective<'_> {
    fn episodes_per_eval(&self) -> usize {
        self.config.episodes
    }

    fn evaluate(&mut self, update: &UpdateVector, run_index: usize) -> Result<Observation> {
        evaluate_update(self.policy, update, self.task, &self.config, self.seed, run_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{fit_em, EmConfig};
    use crate::tasks::scripted_expert;
    use crate::updates::{Modality, UpdateSpec};
    use nalgebra::{DMatrix, DVector};

    fn still_policy() -> GmmPolicy {
        GmmPolicy::new(vec![1.0], vec![DVector::zeros(6)], vec![DMatrix::identity(6, 6)]).unwrap()
    }

    #[test]
    fn clipping_bounds_speed() {
        let mut v = vec![3.0, 4.0, 0.0];
        clip_norm(&mut v, 0.5);
        assert!((v[0] - 0.3).abs() < 1e-15 && (v[1] - 0.4).abs() < 1e-15);
        let mut w = vec![0.1, 0.0, 0.0];
        clip_norm(&mut w, 0.5);
        assert_eq!(w, vec![0.1, 0.0, 0.0]);
    }

    #[test]
    fn still_policy_times_out_with_zero_reward() {
        let task = TaskSpec::preset("slide").unwrap();
        let cfg = RolloutConfig::default();
        let r = rollout(&still_policy(), reset(&task, 1), &cfg, 1).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.trajectory.steps.len(), cfg.max_steps + 1);
        r.trajectory.validate().unwrap();
    }

    #[test]
    fn evaluation_is_deterministic_and_in_range() {
        let task = TaskSpec::preset("drawer").unwrap();
        let demos: Vec<_> = (0..10).map(|s| scripted_expert(&task, 100 + s, 0.01).unwrap()).collect();
        let policy = fit_em(&demos, 5, 1, &EmConfig::default()).unwrap();
        let cfg = RolloutConfig::default();
        let (a, ra) = evaluate_policy(&policy, &task, &cfg, 7, 0).unwrap();
        let (b, _) = evaluate_policy(&policy, &task, &cfg, 7, 0).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
        for r in &ra {
            for st in &r.trajectory.steps {
                assert!(st.s_dot.iter().map(|x| x * x).sum::<f64>().sqrt() <= cfg.v_max + 1e-12);
            }
        }
    }

    #[test]
    fn zero_update_matches_base_policy() {
        let task = TaskSpec::preset("slide").unwrap();
        let demos: Vec<_> = (0..10).map(|s| scripted_expert(&task, s, 0.01).unwrap()).collect();
        let policy = fit_em(&demos, 5, 1, &EmConfig::default()).unwrap();
        let spec = UpdateSpec::for_policy(&policy, &[Modality::Means]).unwrap();
        let cfg = RolloutConfig::default();
        let o = evaluate_update(&policy, &UpdateVector::zeros(spec), &task, &cfg, 3, 2).unwrap();
        assert_eq!(o.mean_return, evaluate_policy(&policy, &task, &cfg, 3, 2).unwrap().0);
        assert_eq!(o.episodes, 8);
        assert!(!o.rejected);
    }
}
