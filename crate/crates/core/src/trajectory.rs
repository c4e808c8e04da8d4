//! Timestamped state/velocity sequences and their JSON-lines storage.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: f64,
    pub s: Vec<f64>,
    pub s_dot: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub seed: u64,
    pub steps: Vec<Step>,
    pub success: bool,
}

impl Trajectory {
    pub fn dim_s(&self) -> Option<usize> {
        self.steps.first().map(|st| st.s.len())
    }

    pub fn validate(&self) -> Result<()> {
        let Some(dim) = self.dim_s() else {
            return Ok(());
        };
        for (i, st) in self.steps.iter().enumerate() {
            if st.s.len() != dim || st.s_dot.len() != dim {
                return Err(Error::Invariant(format!("step {i} has mismatched dimensions")));
            }
            if i > 0 && st.t <= self.steps[i - 1].t {
                return Err(Error::Invariant(format!("timestamps not increasing at step {i}")));
            }
        }
        Ok(())
    }

    /// Replaces every `s_dot` with finite differences of `s` over the timestamps.
    pub fn with_finite_difference_velocities(mut self) -> Self {
        let v = finite_difference_velocities(&self.steps);
        for (st, v) in self.steps.iter_mut().zip(v) {
            st.s_dot = v;
        }
        self
    }
}

/// Central differences in the interior, one-sided at both ends.
pub fn finite_difference_velocities(steps: &[Step]) -> Vec<Vec<f64>> {
    let n = steps.len();
    if n < 2 {
        return steps.iter().map(|st| vec![0.0; st.s.len()]).collect();
    }
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            let dt = steps[b].t - steps[a].t;
            steps[a]
                .s
                .iter()
                .zip(&steps[b].s)
                .map(|(x0, x1)| (x1 - x0) / dt)
                .collect()
        })
        .collect()
}

/// First line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub format: String,
    pub version: u32,
    pub task_id: String,
    pub seed: u64,
    pub count: usize,
}

impl TrajectoryHeader {
    pub const FORMAT: &'static str = "bopt-gmm/trajectories";

    pub fn new(task_id: &str, seed: u64, count: usize) -> Self {
        Self {
            format: Self::FORMAT.to_string(),
            version: 1,
            task_id: task_id.to_string(),
            seed,
            count,
        }
    }
}

pub fn write_trajectories(
    path: &Path,
    header: Option<&TrajectoryHeader>,
    trajectories: &[Trajectory],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        serde_json::to_writer(&mut w, h)?;
        w.write_all(b"\n")?;
    }
    for t in trajectories {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory file, skipping an optional header line.
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed(format!("line {}: {e}", lineno + 1)))?;
        if value.get("format").is_some() {
            continue;
        }
        let t: Trajectory = serde_json::from_value(value)
            .map_err(|e| Error::Malformed(format!("line {}: {e}", lineno + 1)))?;
        t.validate()?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, v: f64) -> Vec<Step> {
        (0..n)
            .map(|i| Step {
                t: i as f64 * 0.1,
                s: vec![v * i as f64 * 0.1, 1.0, -2.0],
                s_dot: vec![0.0; 3],
            })
            .collect()
    }

    #[test]
    fn finite_differences_recover_constant_velocity() {
        for v in finite_difference_velocities(&line(6, 0.3)) {
            assert!((v[0] - 0.3).abs() < 1e-12);
            assert!(v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
        }
    }

    #[test]
    fn validate_rejects_non_monotone_time() {
        let mut steps = line(3, 1.0);
        steps[2].t = 0.05;
        let t = Trajectory { task_id: "x".into(), seed: 0, steps, success: false };
        assert!(t.validate().is_err());
    }

    #[test]
    fn file_round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        let t = Trajectory { task_id: "slide".into(), seed: 9, steps: line(4, 0.2), success: true };
        write_trajectories(&path, Some(&TrajectoryHeader::new("slide", 9, 1)), &[t.clone()]).unwrap();
        assert_eq!(read_trajectories(&path).unwrap(), vec![t]);
    }
}
