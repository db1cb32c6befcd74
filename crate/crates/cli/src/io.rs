//! File plumbing: guarded and atomic writes, hashing, run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Refuses to clobber existing outputs unless `force` is set.
pub fn check_fresh(paths: &[&Path], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(CliError::Config(format!("{} exists; pass --force to overwrite", p.display()))),
        None => Ok(()),
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} not found", path.display())))
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = sibling(path, ".tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

pub fn hash_file(path: &Path) -> Result<FileHash, CliError> {
    let bytes = read(path)?;
    Ok(FileHash { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Everything needed to rerun a command bit for bit.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub config: Value,
    pub seeds: Vec<(String, u64)>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize, seeds: Vec<(String, u64)>, inputs: Vec<FileHash>) -> Result<Self, CliError> {
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            config: serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?,
            seeds,
            inputs,
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        })
    }

    /// Hashes `outputs` and writes the manifest next to `primary`.
    pub fn finish(mut self, primary: &Path, outputs: &[&Path]) -> Result<PathBuf, CliError> {
        self.outputs = outputs.iter().map(|p| hash_file(p)).collect::<Result<_, _>>()?;
        self.finished_unix = unix_now();
        let path = sibling(primary, ".manifest.json");
        let mut text = serde_json::to_vec_pretty(&self).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push(b'\n');
        write_atomic(&path, &text)?;
        Ok(path)
    }
}
