//! Output helpers and the `run.json` provenance record.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Serialize)]
struct Versions {
    aikae: &'static str,
    aikae_cli: &'static str,
    checkpoint_format: &'static str,
    checkpoint_version: u32,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    args: Vec<String>,
    seed: u64,
    config: &'a RunConfig,
    versions: Versions,
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Writes `run.json` into `dir`: the fully resolved config, the seed and
/// the versions needed to reproduce the run.
pub fn write_run_record(dir: &Path, command: &str, cfg: &RunConfig) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let rec = RunRecord {
        command,
        args: std::env::args().collect(),
        seed: cfg.seed,
        config: cfg,
        versions: Versions {
            aikae: aikae::VERSION,
            aikae_cli: env!("CARGO_PKG_VERSION"),
            checkpoint_format: aikae::models::CHECKPOINT_FORMAT,
            checkpoint_version: aikae::models::CHECKPOINT_VERSION,
        },
    };
    let path = dir.join("run.json");
    write_json(&path, &rec)?;
    Ok(path)
}
