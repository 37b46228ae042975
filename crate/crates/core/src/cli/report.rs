//! Per-stage bookkeeping written to `run_report.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub inputs: usize,
    pub outputs: usize,
    pub discarded: BTreeMap<String, usize>,
    pub seconds: f64,
    #[serde(default)]
    pub details: BTreeMap<String, Value>,
    #[serde(default)]
    pub config: Value,
}

impl StageReport {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        StageReport {
            inputs,
            outputs,
            ..Default::default()
        }
    }

    pub fn discard(mut self, reason: &str, count: usize) -> Self {
        self.discarded.insert(reason.to_string(), count);
        self
    }

    pub fn detail(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.details.insert(key.to_string(), value.into());
        self
    }

    /// inputs = outputs + every discard bucket.
    pub fn reconciles(&self) -> bool {
        self.inputs == self.outputs + self.discarded.values().sum::<usize>()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub stages: BTreeMap<String, StageReport>,
}

impl RunReport {
    pub const FILE_NAME: &'static str = "run_report.json";

    /// Loads the report in `dir`, or an empty one if absent or unreadable.
    pub fn load(dir: &Path) -> Self {
        fs::read_to_string(dir.join(Self::FILE_NAME))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        fs::write(dir.join(Self::FILE_NAME), text).map_err(|e| CliError::Data(e.to_string()))
    }

    /// Replaces one stage entry in the report stored in `dir`.
    pub fn record(dir: &Path, stage: &str, report: StageReport) -> Result<(), CliError> {
        debug_assert!(report.reconciles(), "stage {stage} counts do not reconcile");
        let mut run = Self::load(dir);
        run.stages.insert(stage.to_string(), report);
        run.save(dir)
    }
}

pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Self {
        Timer(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
