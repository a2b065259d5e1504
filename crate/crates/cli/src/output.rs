use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Version of every JSON document the tool writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Common header of every JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Envelope<T> {
    pub fn new(command: &str, cfg: &RunConfig, body: T) -> Self {
        Self { schema_version: SCHEMA_VERSION, command: command.into(), config_hash: cfg.hash(), seed: cfg.seed, body }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_envelope<T: DeserializeOwned>(path: &Path) -> Result<Envelope<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let env: Envelope<T> = serde_json::from_str(&text)
        .map_err(ugf_core::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(ugf_core::Error::Schema(format!(
            "{} has schema version {}, expected {SCHEMA_VERSION}",
            path.display(),
            env.schema_version
        ))
        .into());
    }
    Ok(env)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// CSV with a header row; values use the shortest round-trip form.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn num(v: f64) -> String {
    format!("{v:?}")
}
