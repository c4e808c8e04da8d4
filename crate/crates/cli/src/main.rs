use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bopt_gmm::gmm::load_model;
use bopt_gmm::harness::{
    aggregate, baseline_online, cmd_fit, cmd_gen_demos, optimize_runs, write_report_csv, ExperimentConfig, RunReport,
};
use bopt_gmm::trajectory::read_trajectories;
use bopt_gmm::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bopt-gmm", version, about = "Improve GMM motion policies with Bayesian optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment configuration JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task preset (slide, drawer, door) or path to a task JSON file.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Episode budget per run.
    #[arg(long)]
    budget: Option<usize>,
    /// Update modalities, e.g. mu, eig, rxyz, mu+eig, rank1.
    #[arg(long)]
    modality: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted demonstrations.
    GenDemos {
        #[command(flatten)]
        common: Common,
        /// Number of demonstrations.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Fit a policy to demonstrations with EM.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Optimize a fitted policy; writes logs and report.json into --out.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Degradation severity applied to the model before optimizing.
        #[arg(long)]
        degrade: Option<f64>,
    },
    /// Run the online refitting baseline; writes report.json into --out.
    BaselineOnline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        degrade: Option<f64>,
    },
    /// Merge run reports into report.csv and summary.json in --out.
    Report {
        /// Run report files.
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> bopt_gmm::Result<ExperimentConfig> {
    let mut c = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = &common.task {
        c.task = t.clone();
    }
    if let Some(k) = common.k {
        c.k = k;
    }
    if let Some(b) = common.budget {
        c.episode_budget = b;
    }
    if let Some(m) = &common.modality {
        c.modality = m.clone();
    }
    if let Some(o) = &common.out {
        c.out = Some(o.clone());
    }
    Ok(c)
}

fn required(path: &Option<PathBuf>, what: &str) -> bopt_gmm::Result<PathBuf> {
    path.clone().ok_or_else(|| Error::Config(format!("missing --{what}")))
}

fn load_fitted(config: &ExperimentConfig) -> bopt_gmm::Result<bopt_gmm::GmmPolicy> {
    let (policy, _) = load_model(&required(&config.model, "model")?)?;
    if policy.k() != config.k {
        return Err(Error::Config(format!("model has k={} but k={} was requested", policy.k(), config.k)));
    }
    Ok(policy)
}

fn print_report(report: &RunReport) {
    for s in &report.seeds {
        let e80 = s.episodes_to_80.map_or("none".to_string(), |e| e.to_string());
        println!(
            "seed {}: initial {:.3} final {:.3} episodes_to_80 {} ({} episodes)",
            s.seed, s.initial_success, s.final_success, e80, s.episodes
        );
    }
}

fn write_run(report: &RunReport, dir: &Path) -> bopt_gmm::Result<()> {
    report.save(&dir.join("report.json"))?;
    print_report(report);
    Ok(())
}

fn out_dir(config: &ExperimentConfig) -> bopt_gmm::Result<PathBuf> {
    let dir = required(&config.out, "out")?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn run(cli: Cli) -> bopt_gmm::Result<()> {
    match cli.command {
        Command::GenDemos { common, n, noise } => {
            let mut c = load_config(&common)?;
            if let Some(s) = common.seed {
                c.demo_seed = s;
            }
            if let Some(n) = n {
                c.n_demos = n;
            }
            if let Some(x) = noise {
                c.demo_noise = x;
            }
            c.validate()?;
            let out = required(&c.out, "out")?;
            let demos = cmd_gen_demos(&c, &out)?;
            println!("wrote {} demonstrations to {}", demos.len(), out.display());
        }
        Command::Fit { common, demos } => {
            let mut c = load_config(&common)?;
            if let Some(s) = common.seed {
                c.fit_seed = s;
            }
            if demos.is_some() {
                c.demos = demos;
            }
            c.validate()?;
            let out = required(&c.out, "out")?;
            let policy = cmd_fit(&c, &required(&c.demos, "demos")?, &out)?;
            println!("fitted k={} policy to {}", policy.k(), out.display());
        }
        Command::Optimize { common, model, degrade } => {
            let mut c = load_config(&common)?;
            if let Some(s) = common.seed {
                c.seeds = vec![s];
            }
            if model.is_some() {
                c.model = model;
            }
            if let Some(d) = degrade {
                c.degrade = d;
            }
            c.validate()?;
            let policy = load_fitted(&c)?;
            let dir = out_dir(&c)?;
            write_run(&optimize_runs(&c, &policy, Some(&dir))?, &dir)?;
        }
        Command::BaselineOnline { common, model, demos, degrade } => {
            let mut c = load_config(&common)?;
            if let Some(s) = common.seed {
                c.seeds = vec![s];
            }
            if model.is_some() {
                c.model = model;
            }
            if demos.is_some() {
                c.demos = demos;
            }
            if let Some(d) = degrade {
                c.degrade = d;
            }
            c.validate()?;
            let policy = load_fitted(&c)?;
            let trajectories = read_trajectories(&required(&c.demos, "demos")?)?;
            let dir = out_dir(&c)?;
            write_run(&baseline_online(&c, &policy, &trajectories)?, &dir)?;
        }
        Command::Report { reports, out } => {
            if reports.is_empty() {
                return Err(Error::Config("no report files given".into()));
            }
            let loaded = reports.iter().map(|p| RunReport::load(p)).collect::<bopt_gmm::Result<Vec<_>>>()?;
            let summary = aggregate(&loaded)?;
            let dir = required(&out, "out")?;
            std::fs::create_dir_all(&dir)?;
            write_report_csv(&summary, &dir.join("report.csv"))?;
            let mut text = serde_json::to_string_pretty(&summary)?;
            text.push('\n');
            std::fs::write(dir.join("summary.json"), text)?;
            for row in &summary.rows {
                println!(
                    "{} {} {} k={}: final {:.3}, episodes_to_80 {} on {}/{} seeds",
                    serde_json::to_string(&row.method)?.trim_matches('"'),
                    row.task_id,
                    row.modality.as_deref().unwrap_or("-"),
                    row.k,
                    row.final_success,
                    row.episodes_to_80.map_or("none".to_string(), |e| format!("{e:.1}")),
                    row.episodes_to_80_achieved,
                    row.seeds
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Budget { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
