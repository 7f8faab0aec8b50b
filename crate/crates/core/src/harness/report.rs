//! Run records written next to checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::macs::MacCounts;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacReport {
    pub dense: u64,
    pub conv: u64,
    pub attention: u64,
    pub total: u64,
}

impl From<MacCounts> for MacReport {
    fn from(c: MacCounts) -> Self {
        MacReport {
            dense: c.dense,
            conv: c.conv,
            attention: c.attention,
            total: c.total(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub lambda: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_utterances: usize,
    /// Share of utterances whose greedy decode equals the label exactly.
    pub exact_match: f64,
    /// Total edit distance over total reference length.
    pub token_error_rate: f64,
    pub mean_ctc_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub steps: usize,
    pub num_params: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub losses: Vec<f64>,
    pub eval: EvalReport,
    /// Forward MACs for one pass over the training set.
    pub macs_per_epoch: MacReport,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Copy with wall-clock time zeroed, for comparing runs.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        what: "json",
        detail: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_trace(path: &Path, trace: &[StepRecord]) -> Result<()> {
    let err = |e: csv::Error| Error::Format {
        what: "loss trace",
        detail: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for rec in trace {
        w.serialize(rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<StepRecord>> {
    let err = |e: csv::Error| Error::Format {
        what: "loss trace",
        detail: e.to_string(),
    };
    csv::Reader::from_path(path)
        .map_err(err)?
        .deserialize()
        .map(|r| r.map_err(err))
        .collect()
}
