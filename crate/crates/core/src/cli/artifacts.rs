//! Output staging: files are held in memory until the command succeeds,
//! then written with write-then-rename so a failed run leaves nothing behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            path: path.into(),
            sha256: hex(&Sha256::digest(bytes)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// sha256 of the resolved configuration, when the command has one.
    pub config_hash: Option<String>,
    /// The resolved configuration, defaults included.
    pub config: Option<serde_json::Value>,
    pub workers: usize,
    pub wall_time_s: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub struct Artifacts {
    command: String,
    seed: u64,
    config: Option<(String, serde_json::Value)>,
    inputs: Vec<FileDigest>,
    files: Vec<(String, Vec<u8>)>,
    started: Instant,
}

impl Artifacts {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config: None,
            inputs: Vec::new(),
            files: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn set_config(&mut self, hash: String, resolved: serde_json::Value) {
        self.config = Some((hash, resolved));
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileDigest::of(path.display().to_string(), bytes));
    }

    /// `name` is relative to the output directory and must not leave it.
    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        let name = name.into();
        debug_assert!(!name.contains("..") && !name.starts_with('/'));
        self.files.push((name, bytes.into()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every file, then `manifest.json`.
    pub fn commit(self, dir: &Path) -> Result<RunManifest> {
        fs::create_dir_all(dir)?;
        let mut outputs = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            write_atomic(&dir.join(name), bytes)?;
            outputs.push(FileDigest::of(name.clone(), bytes));
        }
        let (config_hash, config) = match self.config {
            Some((h, c)) => (Some(h), Some(c)),
            None => (None, None),
        };
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            seed: self.seed,
            config_hash,
            config,
            workers: rayon::current_num_threads(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            inputs: self.inputs,
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
        Ok(manifest)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = parent.join(format!(".{name}.partial"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
