//! Line-delimited JSON run log.
//!
//! Every line is one object with a `kind` field:
//!
//! - `config`: `format`, `threads`, `config` (the full [`TrainConfig`]), `train_cases`, `val_cases`
//! - `step`: `step`, `epoch`, `cls`, `dice`, `atn`, `total`, `degenerate`, `skipped`
//! - `epoch`: `epoch`, `train_loss`, `val_dsc`, `val_undefined`, `improved`, `skipped_steps`
//! - `abort`: `step`, `epoch`, `reason`
//! - `case`: `split`, `metrics` (per-case metrics from the final evaluation)
//! - `summary`: `epochs_run`, `best_epoch`, `best_val_dsc`, `aborted`
//!
//! Records depend only on the configuration, data and thread count. Wall-clock
//! time is kept apart (see [`Timing`]) so two replays produce identical logs.

use std::io::Write as _;
use std::path::Path;

use crate::data::Split;
use crate::error::{Error, Result};
use crate::metrics::CaseMetrics;
use crate::train::config::TrainConfig;

pub const RUNLOG_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Config {
        format: u32,
        threads: usize,
        config: TrainConfig,
        train_cases: usize,
        val_cases: usize,
    },
    Step {
        step: u64,
        epoch: usize,
        cls: f64,
        dice: f64,
        atn: f64,
        total: f64,
        degenerate: usize,
        skipped: bool,
    },
    Epoch {
        epoch: usize,
        train_loss: f64,
        val_dsc: Option<f64>,
        val_undefined: usize,
        improved: bool,
        skipped_steps: u64,
    },
    Abort {
        step: u64,
        epoch: usize,
        reason: String,
    },
    Case {
        split: Split,
        metrics: CaseMetrics,
    },
    Summary {
        epochs_run: usize,
        best_epoch: Option<usize>,
        best_val_dsc: Option<f64>,
        aborted: bool,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<Record>,
}

impl RunLog {
    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Parses a log; blank lines are skipped, malformed lines are reported by number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(line)
                    .map_err(|e| Error::Config(format!("run log line {}: {e}", i + 1)))?,
            );
        }
        Ok(Self { records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn steps(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| matches!(r, Record::Step { .. }))
    }

    pub fn cases(&self) -> Vec<(Split, &CaseMetrics)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Case { split, metrics } => Some((*split, metrics)),
                _ => None,
            })
            .collect()
    }
}

/// Wall-clock seconds per epoch, written beside the run log.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct Timing {
    pub epoch_seconds: Vec<f64>,
    pub eval_seconds: f64,
}

impl Timing {
    pub fn total(&self) -> f64 {
        self.epoch_seconds.iter().sum::<f64>() + self.eval_seconds
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for (i, s) in self.epoch_seconds.iter().enumerate() {
            writeln!(f, "{{\"epoch\":{i},\"seconds\":{s}}}").map_err(|e| Error::io(path, e))?;
        }
        writeln!(f, "{{\"eval_seconds\":{}}}", self.eval_seconds).map_err(|e| Error::io(path, e))
    }
}
