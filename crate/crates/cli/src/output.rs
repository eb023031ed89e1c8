//! Output files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub stochline: &'static str,
    pub stochline_cli: &'static str,
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_file: Option<String>,
    pub config_sha256: Option<String>,
    /// The configuration document, verbatim.
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub versions: Versions,
    pub exit_code: u8,
    pub outputs: Vec<OutputRecord>,
}

/// Collects output files in one directory, hashing each as it is written.
pub struct OutputDir {
    dir: PathBuf,
    records: Vec<OutputRecord>,
    /// Comment line for CSV files.
    pub comment: String,
}

impl OutputDir {
    pub fn create(dir: &Path, config_hash: Option<&str>) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let comment = match config_hash {
            Some(h) => format!("config sha256 {h}"),
            None => "no config".to_string(),
        };
        Ok(OutputDir { dir: dir.to_path_buf(), records: Vec::new(), comment })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.records.push(OutputRecord { file: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Write a CSV produced by `fill`, which receives the comment line.
    pub fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>, &str) -> Result<()>) -> Result<()> {
        let mut bytes = Vec::new();
        let comment = self.comment.clone();
        fill(&mut bytes, &comment)?;
        self.write(name, &bytes)
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<PathBuf> {
        manifest.outputs = self.records;
        let path = self.dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
