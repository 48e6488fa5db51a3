//! Per-run manifest listing the command, resolved config and every artifact
//! with its checksum. Timestamps live here and nowhere else, so artifacts
//! stay byte-identical across reruns.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl Artifact {
    pub fn of(path: &Path) -> std::io::Result<Self> {
        let data = std::fs::read(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<Artifact>,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: &RunConfig, seed: u64, started_at: u64) -> Self {
        Self {
            command: command.into(),
            argv,
            config: config.clone(),
            config_hash: config.hash(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            started_at,
            finished_at: started_at,
        }
    }

    /// Checksums `paths` and writes `run_manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path, paths: &[PathBuf]) -> std::io::Result<PathBuf> {
        self.outputs = paths.iter().map(|p| Artifact::of(p)).collect::<Result<_, _>>()?;
        self.finished_at = unix_now();
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}
