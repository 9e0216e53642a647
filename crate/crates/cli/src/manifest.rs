use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Provenance record written next to every output artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<PathBuf>,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64, started_unix_ms: u128) -> Self {
        Self {
            tool: "mscsa".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash,
            seed,
            threads: rayon::current_num_threads(),
            started_unix_ms,
            finished_unix_ms: started_unix_ms,
            outputs: Vec::new(),
        }
    }

    /// Sidecar path for an artifact: `<artifact>.manifest.json`.
    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    /// Stamps the finish time and writes the manifest next to `outputs[0]`.
    pub fn finish(mut self, outputs: Vec<PathBuf>) -> Result<PathBuf, CliError> {
        let first = outputs.first().cloned().ok_or_else(|| CliError::Usage("no outputs to describe".into()))?;
        self.outputs = outputs;
        self.finished_unix_ms = now_ms();
        let path = Self::path_for(&first);
        fs::write(&path, serde_json::to_string_pretty(&self).expect("manifest serializes"))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| CliError::Usage(e.to_string()))
    }
}
