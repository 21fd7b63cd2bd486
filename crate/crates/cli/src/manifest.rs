use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::Failure;

/// Everything needed to repeat one invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub precision: Option<String>,
    pub calibrator: Option<String>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub threads: usize,
    pub artifacts: Vec<PathBuf>,
    /// Git-style SHA-256 blob hash of the config file, when one was given.
    pub config_file_hash: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seed,
            precision: None,
            calibrator: None,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_seconds: 0.0,
            threads: rayon::current_num_threads(),
            artifacts: Vec::new(),
            config_file_hash: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        let mut json = serde_json::to_vec_pretty(self).map_err(|e| Failure::Io(e.to_string()))?;
        json.push(b'\n');
        fs::write(path, json).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
    }
}

/// `dir/name.csv` -> `dir/name.manifest.json`.
pub fn manifest_beside(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}
