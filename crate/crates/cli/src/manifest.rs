//! Run manifest: the resolved configuration plus hashes of every output.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub library: String,
    pub version: String,
    pub kind: String,
    pub seed: u64,
    /// Resolved configuration in its canonical text form.
    pub config: String,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub threads: usize,
    pub rng_streams: Vec<String>,
    pub files: Vec<FileEntry>,
    /// Scalar results; non-finite values are omitted.
    pub summary: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn config(&self) -> CliResult<ExperimentConfig> {
        ExperimentConfig::parse(&self.config)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Manifest(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    /// `(name, sha256)` of every output file, in output order.
    pub fn hashes(&self) -> Vec<(String, String)> {
        self.files.iter().map(|f| (f.name.clone(), f.sha256.clone())).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
