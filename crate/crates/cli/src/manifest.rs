use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::input_at(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// Record of one command invocation: what went in, what came out and how
/// long it took.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    /// Fully resolved configuration.
    pub config: Value,
    /// Input files keyed by role, with absolute paths.
    pub inputs: BTreeMap<String, FileEntry>,
    /// Output files relative to the output directory.
    pub outputs: Vec<FileEntry>,
    pub details: Value,
    pub warnings: Vec<String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            details: Value::Null,
            warnings: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let sha256 = file_digest(path)?;
        let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
        self.inputs.insert(role.into(), FileEntry { path: abs.display().to_string(), sha256 });
        Ok(())
    }

    /// Path of an input recorded under `role`, after checking that the file
    /// still has the recorded digest.
    pub fn verified_input(&self, role: &str) -> CliResult<PathBuf> {
        let entry = self
            .inputs
            .get(role)
            .ok_or_else(|| CliError::Input(format!("manifest has no '{role}' input")))?;
        let path = PathBuf::from(&entry.path);
        let digest = file_digest(&path)?;
        if digest != entry.sha256 {
            return Err(CliError::input_at(&path, "contents differ from the digest recorded in the manifest"));
        }
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input_at(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::input_at(path, format!("not a run manifest: {e}")))
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Output(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::output_at(&path, e))
    }
}

/// Files written under one output directory, in write order.
#[derive(Debug)]
pub struct OutputSet {
    pub root: PathBuf,
    written: Vec<String>,
}

impl OutputSet {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::output_at(root, e))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::output_at(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::output_at(&path, e))?;
        self.record(rel);
        Ok(())
    }

    /// Notes a file written by someone else.
    pub fn record(&mut self, rel: &str) {
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
    }

    pub fn entries(&self) -> CliResult<Vec<FileEntry>> {
        let mut out = Vec::with_capacity(self.written.len());
        for rel in &self.written {
            let path = self.root.join(rel);
            let bytes = fs::read(&path).map_err(|e| CliError::output_at(&path, e))?;
            out.push(FileEntry { path: rel.clone(), sha256: sha256_hex(&bytes) });
        }
        out.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(out)
    }
}
