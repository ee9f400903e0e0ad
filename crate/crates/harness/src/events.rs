//! Raw per-epoch event log, one JSON record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sidelink_core::EpochReport;

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Which run produced the epoch: a policy name, `train`, or `ddqn/<channel mode>`.
    pub run: String,
    pub licensed_bps: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub report: EpochReport,
}

/// Optional JSONL writer; every method is a no-op when disabled.
pub struct EventSink {
    out: Option<(PathBuf, BufWriter<File>)>,
}

impl EventSink {
    pub fn disabled() -> Self {
        Self { out: None }
    }

    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let file = File::create(path).map_err(HarnessError::io(path))?;
        Ok(Self { out: Some((path.to_path_buf(), BufWriter::new(file))) })
    }

    pub fn open(path: Option<&Path>) -> Result<Self, HarnessError> {
        match path {
            Some(p) => Self::create(p),
            None => Ok(Self::disabled()),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.out.is_some()
    }

    pub fn record(&mut self, run: &str, licensed_bps: f64, seed: u64, report: &EpochReport) -> Result<(), HarnessError> {
        if let Some((path, w)) = &mut self.out {
            let rec = EventRecord { run: run.to_string(), licensed_bps, seed, report: report.clone() };
            let line = serde_json::to_string(&rec).expect("event records serialize");
            writeln!(w, "{line}").map_err(HarnessError::io(path.clone()))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), HarnessError> {
        if let Some((path, w)) = &mut self.out {
            w.flush().map_err(HarnessError::io(path.clone()))?;
        }
        Ok(())
    }
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>, HarnessError> {
    let file = File::open(path).map_err(HarnessError::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(HarnessError::io(path))?;
        let rec = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Config(format!("{}:{}: bad event record: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
