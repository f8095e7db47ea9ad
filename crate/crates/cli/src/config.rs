//! Run configuration: a flat `key.path = value` TOML file holding the batch
//! configuration plus an optional `run.*` section for output plumbing.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tscm::{BatchConfig, Format};

/// Raised for anything the user must fix in their invocation or config file.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub batches: Option<u64>,
    pub format: Option<Format>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub oracle: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub batch: BatchConfig,
    /// Whether the file set `seed` explicitly.
    pub seed_given: bool,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            batch: BatchConfig::default(),
            seed_given: false,
            run: RunSection::default(),
        }
    }
}

fn field_error(file: &str, err: serde_path_to_error::Error<toml::de::Error>) -> UsageError {
    let path = err.path().to_string();
    let inner = err.into_inner();
    UsageError(format!("{file}: invalid configuration at `{path}`: {}", inner.message()))
}

pub fn parse_run_config(text: &str, file: &str) -> Result<RunConfig, UsageError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| UsageError(format!("{file}: {}", e.message())))?;
    let run = match table.remove("run") {
        Some(v) => serde_path_to_error::deserialize(v).map_err(|e| {
            let path = format!("run.{}", e.path());
            UsageError(format!("{file}: invalid configuration at `{path}`: {}", e.into_inner().message()))
        })?,
        None => RunSection::default(),
    };
    let seed_given = table.contains_key("seed");
    let batch: BatchConfig =
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| field_error(file, e))?;
    Ok(RunConfig {
        batch,
        seed_given,
        run,
    })
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    parse_run_config(&text, &path.display().to_string())
}
