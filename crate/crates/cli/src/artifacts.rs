//! Output files. JSON artifacts are `{"command", "config", "result"}`; CSV
//! artifacts start with `#` lines carrying the same command and config.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Serialize, Deserialize)]
pub struct Artifact<T> {
    pub command: String,
    pub config: ExperimentConfig,
    pub result: T,
}

pub fn config_line(config: &ExperimentConfig) -> Result<String> {
    Ok(serde_json::to_string(config)?)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_json<T: Serialize>(path: &Path, command: &str, config: &ExperimentConfig, result: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Out<'a, T> {
        command: &'a str,
        config: &'a ExperimentConfig,
        result: &'a T,
    }
    let text = serde_json::to_string_pretty(&Out { command, config, result })?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Artifact<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, command: &str, config: &ExperimentConfig, rows: &[T]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# command: {command}")?;
    writeln!(w, "# config: {}", config_line(config)?)?;
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

/// Config embedded in a CSV artifact's header.
pub fn csv_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix("# config: "))
        .with_context(|| format!("{} has no config line", path.display()))?;
    Ok(serde_json::from_str(line)?)
}
