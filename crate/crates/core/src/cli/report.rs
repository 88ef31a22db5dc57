//! Reports, CSV tables and their files.

use super::config::Subcommand;
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// `value <= limit`.
    Le,
    /// `value >= limit`.
    Ge,
    /// A yes/no property; `value` is 1 or 0.
    Holds,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Check {
    pub fn le(name: &str, value: f64, limit: f64) -> Check {
        Check { name: name.into(), value, limit, relation: Relation::Le, pass: value <= limit }
    }

    pub fn ge(name: &str, value: f64, limit: f64) -> Check {
        Check { name: name.into(), value, limit, relation: Relation::Ge, pass: value >= limit }
    }

    pub fn holds(name: &str, ok: bool) -> Check {
        Check { name: name.into(), value: if ok { 1.0 } else { 0.0 }, limit: 1.0, relation: Relation::Holds, pass: ok }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub subcommand: Subcommand,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub measured: serde_json::Value,
    /// Files written next to the report, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl Report {
    pub fn new(subcommand: Subcommand, checks: Vec<Check>, measured: serde_json::Value) -> Report {
        let pass = checks.iter().all(|c| c.pass);
        Report { subcommand, pass, checks, measured, artifacts: Vec::new() }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// A CSV table held in memory until the run writes it.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Table {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(&self.name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Everything one subcommand produces.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub report: Report,
    pub tables: Vec<Table>,
    /// `(file name, svg text)`.
    pub plots: Vec<(String, String)>,
}
