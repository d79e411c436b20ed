use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use smlm_core::io::{fingerprint, hash_file, FileEntry};

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written once into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full invocation, program name excluded.
    pub args: Vec<String>,
    /// The resolved configuration (file contents plus command-line overrides).
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub threads: usize,
    pub wall_time_s: f64,
}

/// Accumulates manifest fields while a command runs.
pub struct ManifestBuilder {
    command: String,
    args: Vec<String>,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            args,
            config: serde_json::Value::Null,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> CliResult<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn seed(&mut self, seed: u64) {
        self.seeds.push(seed);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    /// Hashes the inputs and writes `manifest.json` into `dir`.
    pub fn finish(self, dir: &Path) -> CliResult<RunManifest> {
        let inputs = self
            .inputs
            .iter()
            .filter(|p| p.is_file())
            .map(|p| Ok(FileEntry { path: p.display().to_string(), sha256: hash_file(p)? }))
            .collect::<CliResult<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command,
            args: self.args,
            config_sha256: fingerprint(&self.config)?,
            config: self.config,
            seeds: self.seeds,
            inputs,
            outputs: self.outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}
