use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::episode::{evaluate_policy, EpisodeObjective};
use crate::error::{Error, Result};
use crate::gmm::{fit_em_warm, joint_samples, EmConfig, GmmPolicy};
use crate::seed;
use crate::surrogate::{optimize, write_log};
use crate::tasks::TaskSpec;
use crate::trajectory::Trajectory;
use crate::updates::integrate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bopt,
    OnlineGmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Training episodes consumed.
    pub episode: usize,
    /// Reported success rate of the policy in effect from this episode on.
    pub success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub initial_success: f64,
    pub curve: Vec<CurvePoint>,
    pub final_success: f64,
    pub episodes_to_80: Option<usize>,
    /// Surrogate observations, or refit rounds for the online baseline.
    pub observations: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub task_id: String,
    /// Update modalities; absent for the online baseline.
    pub modality: Option<String>,
    pub k: usize,
    pub j: usize,
    pub episode_budget: usize,
    pub eval_episodes: usize,
    pub degrade: f64,
    pub seeds: Vec<SeedReport>,
}

impl RunReport {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Malformed("report has no seeds".into()));
        }
        for s in &self.seeds {
            let in_range = |v: f64| (0.0..=1.0).contains(&v);
            if s.curve.is_empty() || !in_range(s.initial_success) || !in_range(s.final_success) {
                return Err(Error::Malformed(format!("seed {}: bad curve", s.seed)));
            }
            if s.curve.windows(2).any(|w| w[1].episode < w[0].episode) || s.curve.iter().any(|p| !in_range(p.success)) {
                return Err(Error::Malformed(format!("seed {}: curve out of order or range", s.seed)));
            }
            if s.episodes > self.episode_budget {
                return Err(Error::Malformed(format!("seed {}: budget exceeded", s.seed)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let report: RunReport = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
        report.validate()?;
        Ok(report)
    }
}

/// First curve point whose reported success reaches 0.8.
pub fn episodes_to_80(curve: &[CurvePoint]) -> Option<usize> {
    curve.iter().find(|p| p.success >= 0.8).map(|p| p.episode)
}

/// Success rate over the run's reporting episodes.
///
/// Every reporting evaluation in a run uses the same episode seeds, drawn
/// from a stream disjoint from training episodes.
pub fn reporting_evaluation(policy: &GmmPolicy, task: &TaskSpec, config: &ExperimentConfig, run_seed: u64) -> Result<f64> {
    let seed = seed::derive(run_seed, &[seed::stream::REPORTING]);
    Ok(evaluate_policy(policy, task, &config.reporting_rollout(), seed, 0)?.0)
}

fn seed_report(seed: u64, curve: Vec<CurvePoint>, observations: usize, episodes: usize) -> SeedReport {
    SeedReport {
        seed,
        initial_success: curve[0].success,
        final_success: curve.last().unwrap().success,
        episodes_to_80: episodes_to_80(&curve),
        curve,
        observations,
        episodes,
    }
}

/// Runs the optimizer once per configured seed, writing `log_seed<seed>.jsonl` into `out_dir`.
pub fn optimize_runs(config: &ExperimentConfig, fitted: &GmmPolicy, out_dir: Option<&Path>) -> Result<RunReport> {
    config.validate()?;
    let task = config.task_spec()?;
    let policy = config.initial_policy(fitted)?;
    let spec = config.update_spec(&policy)?;
    let mut seeds = Vec::new();
    for &seed in &config.seeds {
        let mut objective =
            EpisodeObjective { policy: &policy, task: &task, config: config.training_rollout(), seed };
        let run = optimize(&spec, &mut objective, config.episode_budget, seed, &config.optimizer)?;
        if let Some(dir) = out_dir {
            write_log(&dir.join(format!("log_seed{seed}.jsonl")), &run.history)?;
        }
        let mut curve = vec![CurvePoint { episode: 0, success: reporting_evaluation(&policy, &task, config, seed)? }];
        for event in &run.history.incumbents {
            let update = &run.history.observations[event.observation].update;
            let success = match integrate(&policy, update) {
                Ok(p) => reporting_evaluation(&p, &task, config, seed)?,
                Err(Error::Rank1Rejected(_)) => 0.0,
                Err(e) => return Err(e),
            };
            curve.push(CurvePoint { episode: event.episode, success });
        }
        seeds.push(seed_report(seed, curve, run.history.observations.len(), run.history.episodes()));
    }
    Ok(RunReport {
        method: Method::Bopt,
        task_id: task.task_id.clone(),
        modality: Some(config.modalities()?.to_string()),
        k: policy.k(),
        j: config.j,
        episode_budget: config.episode_budget,
        eval_episodes: config.eval_episodes,
        degrade: config.degrade,
        seeds,
    })
}

/// Online refitting baseline: after every `j` episodes, successful rollouts join
/// the demonstrations and the policy is refitted by warm-started EM.
pub fn baseline_online(config: &ExperimentConfig, fitted: &GmmPolicy, demos: &[Trajectory]) -> Result<RunReport> {
    config.validate()?;
    let task = config.task_spec()?;
    let start = config.initial_policy(fitted)?;
    let base = joint_samples(demos)?;
    let seeds = config
        .seeds
        .iter()
        .map(|&seed| online_seed(config, &task, &start, &base, seed).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport {
        method: Method::OnlineGmm,
        task_id: task.task_id.clone(),
        modality: None,
        k: start.k(),
        j: config.j,
        episode_budget: config.episode_budget,
        eval_episodes: config.eval_episodes,
        degrade: config.degrade,
        seeds,
    })
}

fn online_seed(
    config: &ExperimentConfig,
    task: &TaskSpec,
    start: &GmmPolicy,
    base: &[Vec<f64>],
    seed: u64,
) -> Result<(SeedReport, GmmPolicy, usize)> {
    let em = EmConfig { max_iter: config.online_em_iter, ..config.em_config() };
    let rollout = config.training_rollout();
    let rounds = config.episode_budget / config.j;
    let mut policy = start.clone();
    let mut online: Vec<Vec<f64>> = Vec::new();
    let mut curve = vec![CurvePoint { episode: 0, success: reporting_evaluation(&policy, task, config, seed)? }];
    for round in 0..rounds {
        let (_, rollouts) = evaluate_policy(&policy, task, &rollout, seed, round)?;
        for r in rollouts.iter().filter(|r| r.reward > 0.0) {
            online.extend(joint_samples(std::slice::from_ref(&r.trajectory))?);
        }
        let samples: Vec<Vec<f64>> = base.iter().chain(&online).cloned().collect();
        match fit_em_warm(&samples, &policy, &em) {
            Ok((p, _)) => policy = p,
            // A collapsed refit keeps the previous policy.
            Err(Error::DegenerateComponent { .. }) | Err(Error::NotPositiveDefinite) => {}
            Err(e) => return Err(e),
        }
        let success = reporting_evaluation(&policy, task, config, seed)?;
        curve.push(CurvePoint { episode: (round + 1) * config.j, success });
    }
    Ok((seed_report(seed, curve, rounds, rounds * config.j), policy, online.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::fit_em;
    use crate::harness::generate_demos;

    fn setup(budget: usize) -> (ExperimentConfig, GmmPolicy, Vec<Trajectory>) {
        let config = ExperimentConfig {
            episode_budget: budget,
            seeds: vec![4],
            eval_episodes: 10,
            ..Default::default()
        };
        let task = config.task_spec().unwrap();
        let demos = generate_demos(&task, 10, 0, 0.01).unwrap();
        let policy = fit_em(&demos, 5, 0, &config.em_config()).unwrap();
        (config, policy, demos)
    }

    #[test]
    fn budget_80_gives_ten_observations() {
        let (config, policy, _) = setup(80);
        let report = optimize_runs(&config, &policy, None).unwrap();
        assert_eq!(report.seeds[0].observations, 10);
        assert_eq!(report.seeds[0].episodes, 80);
        report.validate().unwrap();
        let text = serde_json::to_string(&report).unwrap();
        assert!(text.contains("\"method\":\"bopt\""));
    }

    #[test]
    fn online_rounds_follow_budget() {
        let (config, policy, demos) = setup(24);
        let report = baseline_online(&config, &policy, &demos).unwrap();
        let s = &report.seeds[0];
        assert_eq!(s.observations, 3);
        assert_eq!(s.curve.len(), 4);
        assert_eq!(s.curve.iter().map(|p| p.episode).collect::<Vec<_>>(), vec![0, 8, 16, 24]);
        report.validate().unwrap();
    }

    #[test]
    fn online_without_successes_refits_demonstrations_only() {
        let (mut config, policy, demos) = setup(16);
        // Nothing can succeed within one step, so the dataset never grows.
        config.rollout.max_steps = 1;
        let task = config.task_spec().unwrap();
        let base = joint_samples(&demos).unwrap();
        let (report, refitted, online) = online_seed(&config, &task, &policy, &base, 1).unwrap();
        assert_eq!(online, 0);
        assert!(report.curve.iter().all(|p| p.success == 0.0));
        let em = EmConfig { max_iter: config.online_em_iter, ..config.em_config() };
        let once = fit_em_warm(&base, &policy, &em).unwrap().0;
        let twice = fit_em_warm(&base, &once, &em).unwrap().0;
        assert_eq!(refitted, twice);
    }

    #[test]
    fn first_curve_point_at_threshold_counts() {
        let c = |e, s| CurvePoint { episode: e, success: s };
        assert_eq!(episodes_to_80(&[c(0, 0.3), c(16, 0.8), c(40, 0.9)]), Some(16));
        assert_eq!(episodes_to_80(&[c(0, 0.3), c(16, 0.78)]), None);
    }
}
