//! Run manifests and output directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::LabConfig;
use crate::error::{io_err, Result};
use crate::seeds::SEED_RULE;

/// Everything needed to re-run an experiment and get the same CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    /// Hash of the experiment name and resolved config; written into every
    /// CSV row.
    pub run_id: String,
    pub config: LabConfig,
    pub seed_rule: String,
    pub code_version: String,
    pub outputs: Vec<String>,
    pub started_utc: String,
    pub wall_clock_secs: f64,
    /// Worker threads; does not affect any output.
    pub jobs: usize,
}

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// First 16 hex digits of SHA-256 over the experiment name and the config
/// serialized as TOML.
pub fn run_id(experiment: &str, config: &LabConfig) -> String {
    let mut h = Sha256::new();
    h.update(experiment.as_bytes());
    h.update([0u8]);
    h.update(config.to_toml().as_bytes());
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(experiment: &str, config: &LabConfig, jobs: usize) -> Self {
        RunManifest {
            experiment: experiment.to_string(),
            run_id: run_id(experiment, config),
            config: config.clone(),
            seed_rule: SEED_RULE.to_string(),
            code_version: CODE_VERSION.to_string(),
            outputs: Vec::new(),
            started_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            wall_clock_secs: 0.0,
            jobs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        Ok(path)
    }
}

/// Creates `<out>/<experiment>/<UTC timestamp>/`, adding a numeric suffix if
/// that directory already exists.
pub fn create_run_dir(out: &Path, experiment: &str) -> Result<PathBuf> {
    let parent = out.join(experiment);
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let mut k = 0usize;
    loop {
        let name = if k == 0 { stamp.clone() } else { format!("{stamp}-{k}") };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => k += 1,
            Err(e) => return Err(io_err(&dir)(e)),
        }
    }
}
