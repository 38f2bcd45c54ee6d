//! Run manifests.
//!
//! A manifest pins everything a run's outputs depend on: the full config,
//! the vocabulary hash, the effective seed, and the code version. Two runs
//! that agree on those fields produce bit-identical traces; timestamps are
//! recorded for bookkeeping only.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::CcrlConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: CcrlConfig,
    pub vocab_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub created_unix_ms: u64,
}

impl RunManifest {
    pub fn new(config: CcrlConfig, vocab_hash: String) -> Self {
        let seed = config.seed;
        Self {
            config,
            vocab_hash,
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
