//! Artifact writing: `<command>.json` summary and `<command>.csv` rows.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub observed: f64,
    pub bound: f64,
    pub detail: String,
}

impl Check {
    /// `observed ≤ bound`.
    pub fn at_most(name: impl Into<String>, observed: f64, bound: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            ok: observed <= bound,
            observed,
            bound,
            detail: detail.into(),
        }
    }

    /// `observed ≥ bound`.
    pub fn at_least(name: impl Into<String>, observed: f64, bound: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            ok: observed >= bound,
            observed,
            bound,
            detail: detail.into(),
        }
    }
}

pub struct Table {
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

pub struct Outcome {
    pub summary: serde_json::Value,
    pub checks: Vec<Check>,
    pub table: Table,
}

impl Outcome {
    pub fn violations(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.ok).collect()
    }
}

#[derive(Serialize)]
struct Envelope<'a> {
    command: &'static str,
    library_version: &'static str,
    config_hash: String,
    config: &'a ExperimentConfig,
    ok: bool,
    violations: Vec<&'a str>,
    checks: &'a [Check],
    summary: &'a serde_json::Value,
}

/// Writes both artifacts and returns their paths.
pub fn write(dir: &Path, cfg: &ExperimentConfig, out: &Outcome) -> io::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let name = cfg.command.name();
    let json_path = dir.join(format!("{name}.json"));
    let csv_path = dir.join(format!("{name}.csv"));

    let violations = out.violations();
    let env = Envelope {
        command: name,
        library_version: globcoup::VERSION,
        config_hash: cfg.hash(),
        config: cfg,
        ok: violations.is_empty(),
        violations: violations.iter().map(|c| c.name.as_str()).collect(),
        checks: &out.checks,
        summary: &out.summary,
    };
    let mut text = serde_json::to_string_pretty(&env).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(&json_path, text)?;

    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(out.table.header)?;
    for row in &out.table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok((json_path, csv_path))
}
