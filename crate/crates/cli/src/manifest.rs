//! Run manifests: enough recorded state to rerun a command exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// SHA-256 of each input path; directories hash their sorted file list.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>, config: impl Serialize) -> Result<Self, CliError> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            argv: std::env::args().collect(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), hash_path(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.insert(path.display().to_string(), hash_path(path)?);
        Ok(())
    }

    /// Writes `manifest.json` inside a directory output, or
    /// `<file>.manifest.json` beside a file output.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf, CliError> {
        let path = if output.is_dir() {
            output.join(MANIFEST_FILE)
        } else {
            let mut name = output.file_name().unwrap_or_default().to_os_string();
            name.push(".");
            name.push(MANIFEST_FILE);
            output.with_file_name(name)
        };
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

/// Hex SHA-256 of a file, or of `relative path ‖ NUL ‖ file hash` lines for
/// every file below a directory (manifests excluded).
pub fn hash_path(path: &Path) -> Result<String, CliError> {
    if path.is_file() {
        let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        return Ok(hex::encode(Sha256::digest(&bytes)));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(hash_path(&path.join(&rel))?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if !path.to_string_lossy().ends_with(MANIFEST_FILE) {
            let rel = path.strip_prefix(root).expect("below root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
