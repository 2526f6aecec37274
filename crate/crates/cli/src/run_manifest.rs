//! Provenance record written next to the outputs of every successful run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
    pub duration_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn file_digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

/// One digest over many files: SHA-256 of their `path  digest` lines.
fn group_digest(label: &str, paths: &[PathBuf]) -> Result<Option<FileDigest>> {
    if paths.is_empty() {
        return Ok(None);
    }
    let mut listing = String::new();
    for p in paths {
        listing.push_str(&format!("{}  {}\n", p.display(), sha256_file(p)?));
    }
    Ok(Some(FileDigest {
        path: format!("{label} ({} files)", paths.len()),
        sha256: hex::encode(Sha256::digest(listing.as_bytes())),
    }))
}

pub struct Recorder {
    start: Instant,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Recorder {
    pub fn start() -> Self {
        Self {
            start: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(file_digest(path)?);
        Ok(())
    }

    pub fn input_group(&mut self, label: &str, paths: &[PathBuf]) -> Result<()> {
        if let Some(d) = group_digest(label, paths)? {
            self.inputs.push(d);
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(file_digest(path)?);
        Ok(())
    }

    pub fn output_group(&mut self, label: &str, paths: &[PathBuf]) -> Result<()> {
        if let Some(d) = group_digest(label, paths)? {
            self.outputs.push(d);
        }
        Ok(())
    }

    pub fn finish(self, config: &impl Serialize, dest: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: std::env::args().collect(),
            config: serde_json::to_value(config).expect("flags serialize"),
            inputs: self.inputs,
            outputs: self.outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_seconds: self.start.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(dest, text).map_err(|e| CliError::io(dest, e))
    }
}

/// `<out>.run.json` beside a single-file output.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".run.json");
    out.with_file_name(name)
}
