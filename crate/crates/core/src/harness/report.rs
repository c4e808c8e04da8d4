//! Merging run reports into mean curves and a summary table.
//!
//! CSV columns: `method,task_id,modality,k,episode,mean_success,seeds`. Each
//! row is the mean over seeds of the step-function success curves at one
//! episode index; `modality` is empty for the online baseline.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{CurvePoint, Method, RunReport, SeedReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub task_id: String,
    pub modality: Option<String>,
    pub k: usize,
    pub seeds: usize,
    pub initial_success: f64,
    pub final_success: f64,
    /// Mean over the seeds that reached 0.8; absent when none did.
    pub episodes_to_80: Option<f64>,
    /// Seeds that reached 0.8.
    pub episodes_to_80_achieved: usize,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub rows: Vec<AggregateRow>,
}

/// Value of a step curve at `episode`.
fn value_at(curve: &[CurvePoint], episode: usize) -> f64 {
    curve.iter().take_while(|p| p.episode <= episode).last().map_or(curve[0].success, |p| p.success)
}

/// Mean over seeds at every episode index where any seed's curve changes.
pub fn mean_curve(seeds: &[SeedReport]) -> Vec<CurvePoint> {
    let mut episodes: Vec<usize> = seeds.iter().flat_map(|s| s.curve.iter().map(|p| p.episode)).collect();
    episodes.sort_unstable();
    episodes.dedup();
    episodes
        .into_iter()
        .map(|e| CurvePoint {
            episode: e,
            success: seeds.iter().map(|s| value_at(&s.curve, e)).sum::<f64>() / seeds.len() as f64,
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Groups seeds by method, task, modality and k across all reports.
pub fn aggregate(reports: &[RunReport]) -> Result<ReportSummary> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to aggregate".into()));
    }
    type Key = (Method, String, Option<String>, usize);
    let mut groups: Vec<(Key, Vec<SeedReport>)> = Vec::new();
    for r in reports {
        r.validate()?;
        let key = (r.method, r.task_id.clone(), r.modality.clone(), r.k);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, seeds)) => seeds.extend(r.seeds.iter().cloned()),
            None => groups.push((key, r.seeds.clone())),
        }
    }
    let rows = groups
        .into_iter()
        .map(|((method, task_id, modality, k), seeds)| {
            let achieved: Vec<f64> = seeds.iter().filter_map(|s| s.episodes_to_80).map(|e| e as f64).collect();
            AggregateRow {
                method,
                task_id,
                modality,
                k,
                seeds: seeds.len(),
                initial_success: mean(seeds.iter().map(|s| s.initial_success)),
                final_success: mean(seeds.iter().map(|s| s.final_success)),
                episodes_to_80: (!achieved.is_empty()).then(|| mean(achieved.iter().copied())),
                episodes_to_80_achieved: achieved.len(),
                curve: mean_curve(&seeds),
            }
        })
        .collect();
    Ok(ReportSummary { rows })
}

pub fn write_report_csv(summary: &ReportSummary, path: &Path) -> Result<()> {
    let mut out = String::from("method,task_id,modality,k,episode,mean_success,seeds\n");
    for row in &summary.rows {
        let method = match row.method {
            Method::Bopt => "bopt",
            Method::OnlineGmm => "online_gmm",
        };
        for p in &row.curve {
            let _ = writeln!(
                out,
                "{method},{},{},{},{},{},{}",
                row.task_id,
                row.modality.as_deref().unwrap_or(""),
                row.k,
                p.episode,
                p.success,
                row.seeds
            );
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(seed: u64, curve: &[(usize, f64)], e80: Option<usize>) -> SeedReport {
        let curve: Vec<CurvePoint> = curve.iter().map(|&(episode, success)| CurvePoint { episode, success }).collect();
        SeedReport {
            seed,
            initial_success: curve[0].success,
            final_success: curve.last().unwrap().success,
            episodes_to_80: e80,
            curve,
            observations: 3,
            episodes: 24,
        }
    }

    fn report(seeds: Vec<SeedReport>) -> RunReport {
        RunReport {
            method: Method::Bopt,
            task_id: "slide".into(),
            modality: Some("eig".into()),
            k: 5,
            j: 8,
            episode_budget: 500,
            eval_episodes: 50,
            degrade: 1.0,
            seeds,
        }
    }

    #[test]
    fn single_seed_passes_through() {
        let s = seed(0, &[(0, 0.4), (16, 0.6), (40, 0.85)], Some(40));
        let summary = aggregate(&[report(vec![s.clone()])]).unwrap();
        let row = &summary.rows[0];
        assert_eq!(row.curve, s.curve);
        assert_eq!(row.initial_success, 0.4);
        assert_eq!(row.final_success, 0.85);
        assert_eq!(row.episodes_to_80, Some(40.0));
    }

    #[test]
    fn episodes_to_80_averages_achieved_seeds_only() {
        let seeds = vec![
            seed(0, &[(0, 0.5), (14, 0.8)], Some(14)),
            seed(1, &[(0, 0.5), (28, 0.9)], Some(28)),
            seed(2, &[(0, 0.5), (30, 0.6)], None),
        ];
        let row = &aggregate(&[report(seeds)]).unwrap().rows[0];
        assert_eq!(row.episodes_to_80, Some(21.0));
        assert_eq!(row.episodes_to_80_achieved, 2);
        assert_eq!(row.seeds, 3);
    }

    #[test]
    fn mean_curve_carries_values_forward() {
        let seeds = vec![seed(0, &[(0, 0.2), (8, 0.6)], None), seed(1, &[(0, 0.4), (16, 1.0)], None)];
        let c = mean_curve(&seeds);
        let got: Vec<(usize, f64)> = c.iter().map(|p| (p.episode, p.success)).collect();
        assert_eq!(got.len(), 3);
        assert!((got[0].1 - 0.3).abs() < 1e-15);
        assert!((got[1].1 - 0.5).abs() < 1e-15);
        assert!((got[2].1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn empty_input_is_a_usage_error() {
        assert!(matches!(aggregate(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn csv_has_header_and_one_row_per_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let summary = aggregate(&[report(vec![seed(0, &[(0, 0.5), (8, 0.75)], None)])]).unwrap();
        write_report_csv(&summary, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method,task_id,modality,k,episode,mean_success,seeds");
        assert_eq!(lines[1], "bopt,slide,eig,5,0,0.5,1");
        assert_eq!(lines.len(), 3);
    }
}
