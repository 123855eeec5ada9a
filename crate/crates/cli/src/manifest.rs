//! Run manifests written next to every output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Arguments as given.
    pub argv: Vec<String>,
    /// Arguments that reproduce the outputs, with the seed made explicit.
    pub rerun_argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
}

pub struct ManifestBuilder {
    command: String,
    seed: u64,
    started: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &str, seed: u64) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            seed,
            started: Instant::now(),
        }
    }

    pub fn finish<C: Serialize>(self, config: &C, inputs: &[&Path], outputs: &[&Path]) -> RunManifest {
        let argv: Vec<String> = std::env::args().collect();
        let mut rerun_argv = argv.clone();
        if !argv.iter().any(|a| a == "--seed" || a.starts_with("--seed=")) {
            rerun_argv.push("--seed".into());
            rerun_argv.push(self.seed.to_string());
        }
        RunManifest {
            format_version: vmin_core::FORMAT_VERSION,
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            argv,
            rerun_argv,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
        }
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(CliError::io(path))
    }
}

/// `model.json` becomes `model.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    output.with_file_name(format!("{stem}.manifest.json"))
}
