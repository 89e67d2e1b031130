//! Run manifests and run directories.

use crate::error::{HarnessError, Result};
use cogdrive_core::simworld::ScenarioConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Environment variable naming the root directory for run outputs.
pub const RUNS_ENV: &str = "COGDRIVE_RUNS";
pub const DEFAULT_RUNS_DIR: &str = "runs";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 over the canonical config, the controller checksum and the
    /// code version.
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub controller: String,
    pub controller_checksum: String,
    /// Unix seconds; excluded from the hash.
    pub start_time: u64,
}

impl RunManifest {
    pub fn for_scenario(command: &str, cfg: &ScenarioConfig, controller: &str, controller_checksum: &str) -> Self {
        Self::new(command, cfg, cfg.seed, controller, controller_checksum)
    }

    /// `config` is any serializable description of the inputs; its JSON form
    /// enters the hash.
    pub fn new(command: &str, config: &impl Serialize, seed: u64, controller: &str, controller_checksum: &str) -> Self {
        let canonical = serde_json::to_string(config).expect("config serializes");
        let mut h = Sha256::new();
        for part in [command, &canonical, controller, controller_checksum, CODE_VERSION] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        Self {
            command: command.to_string(),
            config_hash: hex::encode(h.finalize()),
            seed,
            code_version: CODE_VERSION.to_string(),
            controller: controller.to_string(),
            controller_checksum: controller_checksum.to_string(),
            start_time: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// Directory name: the first 16 hex digits of the hash.
    pub fn run_id(&self) -> &str {
        &self.config_hash[..16]
    }
}

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUNS_DIR))
}

/// Creates `root/<run id>` and writes `manifest.json` into it.
pub fn create_run_dir(root: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let dir = root.join(manifest.run_id());
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    write_json(&dir.join("manifest.json"), manifest)?;
    Ok(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
