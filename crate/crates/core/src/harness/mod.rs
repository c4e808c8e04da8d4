//! Experiment orchestration: demonstrations, fitting, optimization runs,
//! the online-refit baseline and reporting.

mod report;
mod run;

pub use report::{aggregate, mean_curve, write_report_csv, AggregateRow, ReportSummary};
pub use run::{
    baseline_online, episodes_to_80, optimize_runs, reporting_evaluation, CurvePoint, Method, RunReport, SeedReport,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::episode::RolloutConfig;
use crate::error::{Error, Result};
use crate::gmm::{fit_em, save_model, EmConfig, GmmPolicy, ModelMeta};
use crate::seed;
use crate::surrogate::OptimizerConfig;
use crate::tasks::{degrade, scripted_expert, TaskSpec};
use crate::trajectory::{write_trajectories, Trajectory, TrajectoryHeader};
use crate::updates::{Bounds, ModalitySet, UpdateSpec};

pub const TOOL_VERSION: &str = concat!("bopt-gmm ", env!("CARGO_PKG_VERSION"));

/// Experiment configuration; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset name or path to a task JSON file.
    pub task: String,
    pub k: usize,
    /// Modalities joined by `+`, e.g. `mu+eig`.
    pub modality: String,
    pub bounds: Bounds,
    pub epsilon: f64,
    /// Episodes per evaluation.
    pub j: usize,
    pub episode_budget: usize,
    pub seeds: Vec<u64>,
    /// Episodes in each reporting evaluation.
    pub eval_episodes: usize,
    pub rollout: RolloutConfig,
    pub optimizer: OptimizerConfig,
    pub n_demos: usize,
    pub demo_seed: u64,
    pub demo_noise: f64,
    pub fit_seed: u64,
    pub em_reg_scale: f64,
    /// Severity of the perturbation applied to the loaded policy before a run.
    pub degrade: f64,
    /// Maximum EM iterations per online refit.
    pub online_em_iter: usize,
    pub demos: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: "slide".into(),
            k: 5,
            modality: "eig".into(),
            bounds: Bounds::default(),
            epsilon: 1e-3,
            j: 8,
            episode_budget: 500,
            seeds: vec![0, 1, 2],
            eval_episodes: 50,
            rollout: RolloutConfig::default(),
            optimizer: OptimizerConfig::default(),
            n_demos: 10,
            demo_seed: 0,
            demo_noise: 0.01,
            fit_seed: 0,
            em_reg_scale: 1e-2,
            degrade: 0.0,
            online_em_iter: 20,
            demos: None,
            model: None,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if self.j == 0 {
            return Err(Error::Config("j must be positive".into()));
        }
        if self.episode_budget < self.j {
            return Err(Error::Budget { budget: self.episode_budget, per_eval: self.j });
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.eval_episodes == 0 || self.n_demos == 0 {
            return Err(Error::Config("eval_episodes and n_demos must be positive".into()));
        }
        if !(self.degrade >= 0.0 && self.degrade <= 2.0) {
            return Err(Error::Config("degrade severity must lie in [0, 2]".into()));
        }
        let mods = self.modalities()?;
        if mods.0.iter().filter(|m| m.is_covariance()).count() > 1 {
            return Err(Error::Config("at most one covariance modality".into()));
        }
        self.task_spec()?;
        Ok(())
    }

    pub fn modalities(&self) -> Result<ModalitySet> {
        self.modality.parse()
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        TaskSpec::load(&self.task)
    }

    /// Rollout settings for training evaluations (`j` episodes).
    pub fn training_rollout(&self) -> RolloutConfig {
        RolloutConfig { episodes: self.j, ..self.rollout }
    }

    /// Rollout settings for reporting evaluations.
    pub fn reporting_rollout(&self) -> RolloutConfig {
        RolloutConfig { episodes: self.eval_episodes, ..self.rollout }
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig { reg_scale: self.em_reg_scale, ..EmConfig::default() }
    }

    pub fn update_spec(&self, policy: &GmmPolicy) -> Result<UpdateSpec> {
        UpdateSpec::new(&self.modalities()?.0, self.bounds, self.epsilon, policy.k(), policy.dim_s())
    }

    /// The policy a run starts from: the loaded one, degraded if configured.
    pub fn initial_policy(&self, fitted: &GmmPolicy) -> Result<GmmPolicy> {
        degrade(fitted, self.degrade)
    }
}

/// Seed of demonstration `index` in a set generated from `seed`.
pub fn demo_seed(seed: u64, index: usize) -> u64 {
    seed::derive(seed, &[seed::stream::DEMO, index as u64])
}

pub fn generate_demos(task: &TaskSpec, n: usize, seed: u64, noise_std: f64) -> Result<Vec<Trajectory>> {
    (0..n).map(|i| scripted_expert(task, demo_seed(seed, i), noise_std)).collect()
}

/// Generates demonstrations and writes them as JSON lines behind a header line.
pub fn cmd_gen_demos(config: &ExperimentConfig, out: &Path) -> Result<Vec<Trajectory>> {
    let task = config.task_spec()?;
    let demos = generate_demos(&task, config.n_demos, config.demo_seed, config.demo_noise)?;
    let header = TrajectoryHeader::new(&task.task_id, config.demo_seed, demos.len());
    write_trajectories(out, Some(&header), &demos)?;
    Ok(demos)
}

/// Fits a policy to the demonstrations in `demos` and saves it to `out`.
pub fn cmd_fit(config: &ExperimentConfig, demos: &Path, out: &Path) -> Result<GmmPolicy> {
    let trajectories = crate::trajectory::read_trajectories(demos)?;
    let policy = fit_em(&trajectories, config.k, config.fit_seed, &config.em_config())?;
    let meta = ModelMeta {
        seed: config.fit_seed,
        created: TOOL_VERSION.into(),
        source_demos: demos.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    save_model(&policy, meta, out)?;
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"task":"door","k":3}"#).unwrap();
        assert_eq!(partial.k, 3);
        assert_eq!(partial.episode_budget, 500);
        assert_eq!(partial.eval_episodes, 50);
        partial.validate().unwrap();
    }

    #[test]
    fn validation_errors() {
        let bad = ExperimentConfig { modality: "eig+rxyz".into(), ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = ExperimentConfig { task: "window".into(), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { episode_budget: 4, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Budget { .. })));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"tsak":"slide"}"#).is_err());
    }

    #[test]
    fn demo_files_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig { n_demos: 3, ..Default::default() };
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        cmd_gen_demos(&c, &a).unwrap();
        cmd_gen_demos(&c, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(crate::trajectory::read_trajectories(&a).unwrap().len(), 3);
    }
}
