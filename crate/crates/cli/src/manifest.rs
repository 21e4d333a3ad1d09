//! Run manifests written next to every output.

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, Context};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: &'static str,
    pub argv: Vec<String>,
    /// Every flag of the command with defaults filled in.
    pub flags: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub master_seed: Option<u64>,
    /// Whether AHU values were computed with negative days counted as 0.
    pub clamp_mode: Option<bool>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> CliResult<InputDigest> {
    let bytes = std::fs::read(path).data_at(path)?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// `<path>.<suffix>` without replacing an existing extension.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

pub struct ManifestBuilder {
    command: &'static str,
    flags: serde_json::Value,
    started_at: String,
    inputs: Vec<InputDigest>,
    pub master_seed: Option<u64>,
    pub clamp_mode: Option<bool>,
}

impl ManifestBuilder {
    pub fn new(command: &'static str, flags: &impl Serialize) -> CliResult<Self> {
        Ok(Self {
            command,
            flags: serde_json::to_value(flags).map_err(CliError::internal)?,
            started_at: now(),
            inputs: Vec::new(),
            master_seed: None,
            clamp_mode: None,
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(sha256_file(path)?);
        Ok(())
    }

    /// Writes `<primary>.manifest.json`.
    pub fn finish(self, primary: &Path, outputs: Vec<PathBuf>) -> CliResult<PathBuf> {
        let manifest = RunManifest {
            tool: env!("CARGO_BIN_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            argv: std::env::args().collect(),
            flags: self.flags,
            inputs: self.inputs,
            outputs,
            master_seed: self.master_seed,
            clamp_mode: self.clamp_mode,
            started_at: self.started_at,
            finished_at: now(),
        };
        let path = sidecar(primary, "manifest.json");
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    text.push('\n');
    std::fs::write(path, text).write_at(path)
}
