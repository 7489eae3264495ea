//! Run manifest: config/data hashes, seed, and the per-epoch history.
//! Rewritten after every epoch; identical inputs reproduce the file exactly.

use std::path::Path;

use malt_core::train::EpochRecord;
use malt_core::{MaltError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEntry {
    #[serde(flatten)]
    pub record: EpochRecord,
    /// Quick eval mAP at the configured stride, when an eval split exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub history: Vec<EpochEntry>,
}

impl RunManifest {
    pub fn new(config_hash: String, data_hash: String, seed: u64) -> Self {
        RunManifest {
            config_hash,
            data_hash,
            seed,
            history: Vec::new(),
        }
    }

    pub fn push(&mut self, record: EpochRecord, eval_map: Option<f64>) {
        self.history.push(EpochEntry { record, eval_map });
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| MaltError::Format(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| MaltError::Format(format!("manifest parse: {e}")))
    }
}
