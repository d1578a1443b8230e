//! Attack outcome records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of one attack run against one response column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    /// `mope`, `mmope`, `lr`, `mursi` or `share-bottom`.
    pub attack: String,
    /// Response column for multi-task runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<usize>,
    pub config: serde_json::Value,
    pub train_crps: usize,
    pub test_crps: usize,
    /// Held-out accuracy; `None` until evaluated.
    pub accuracy: Option<f64>,
    pub epochs: usize,
    pub wall_time_secs: f64,
    /// Mean gate weight per expert (empty for gateless models).
    #[serde(default)]
    pub gate_means: Vec<f64>,
    pub seed: u64,
    /// Free-form labels added by harnesses (experiment id, target name).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub tags: serde_json::Map<String, serde_json::Value>,
}

impl AttackReport {
    pub fn with_test(mut self, accuracy: f64, test_crps: usize) -> Self {
        self.accuracy = Some(accuracy);
        self.test_crps = test_crps;
        self
    }

    pub fn tag(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.tags.insert(key.to_owned(), value.into());
        self
    }

    /// One-line JSON.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("report is always serializable")
    }

    pub fn from_record(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::FormatLine { line: e.line(), message: e.to_string() })
    }
}
