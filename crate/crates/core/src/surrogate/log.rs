//! JSON-lines observation log.
//!
//! Observation lines carry `update`, `mean_return`, `episodes`, `run_index`
//! and `rejected`; incumbent changes are interleaved as
//! `{"event":"incumbent","episode":…,"mean_return":…,"observation":…}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{History, IncumbentEvent, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogEntry {
    Event {
        event: String,
        episode: usize,
        mean_return: f64,
        observation: usize,
    },
    Observation(Observation),
}

impl LogEntry {
    pub fn incumbent(e: &IncumbentEvent) -> Self {
        LogEntry::Event {
            event: "incumbent".into(),
            episode: e.episode,
            mean_return: e.mean_return,
            observation: e.observation,
        }
    }
}

pub fn write_log(path: &Path, history: &History) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for entry in history.entries() {
        serde_json::to_writer(&mut w, &entry)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a log back into a history.
pub fn read_log(path: &Path) -> Result<History> {
    let reader = BufReader::new(File::open(path)?);
    let mut history = History::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry =
            serde_json::from_str(&line).map_err(|e| Error::Malformed(format!("line {}: {e}", n + 1)))?;
        match entry {
            LogEntry::Observation(o) => {
                o.validate()?;
                history.observations.push(o);
            }
            LogEntry::Event { event, episode, mean_return, observation } if event == "incumbent" => {
                history.incumbents.push(IncumbentEvent { episode, mean_return, observation });
            }
            LogEntry::Event { event, .. } => {
                return Err(Error::Malformed(format!("line {}: unknown event '{event}'", n + 1)));
            }
        }
    }
    Ok(history)
}
