//! Provenance record written beside every command's outputs.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub config_sha256: String,
    /// Effective configuration (canonical TOML); with `seed` it regenerates the outputs.
    pub config: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub notes: Vec<String>,
}

pub fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot hash {}: {e}", path.display())))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

impl Provenance {
    pub fn new(command: &str, seed: u64, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config_sha256: cfg.hash(),
            config: cfg.canonical(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn inputs(mut self, paths: &[PathBuf]) -> Result<Self, CliError> {
        for p in paths {
            self.inputs.push(digest(p)?);
        }
        Ok(self)
    }

    /// Hashes `outputs` and writes `<out>/<command>.provenance.json`.
    pub fn write(mut self, out: &Path, outputs: &[PathBuf]) -> Result<PathBuf, CliError> {
        for p in outputs {
            self.outputs.push(digest(p)?);
        }
        let path = out.join(format!("{}.provenance.json", self.command));
        let json = serde_json::to_string_pretty(&self).expect("provenance serializes");
        std::fs::write(&path, json + "\n").map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
