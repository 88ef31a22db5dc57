//! Batch experiments: read a JSON config, run one subcommand, write
//! `report.json`, CSV tables and SVG plots.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for
//! configuration and I/O errors, 3 for numerical failures such as shooting or
//! Picard non-convergence.

mod commands;
pub mod config;
pub mod report;
pub mod svg;

pub use config::{ExperimentConfig, Subcommand};
pub use report::{Check, Report};

use crate::eikonal::EikonalError;
use crate::hyperbolic::HypError;
use crate::multiproduct::MultiError;
use crate::par;
use crate::phase::PhaseError;
use crate::quantize::QuantError;
use crate::symbols::SymbolError;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const OUT_ENV: &str = "SGFIO_OUT";
pub const DEFAULT_OUT: &str = "sgfio-out";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn config(module: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{module}: {e}"))
}

fn numerical(module: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(format!("{module}: {e}"))
}

impl From<SymbolError> for CliError {
    fn from(e: SymbolError) -> CliError {
        config("symbols", e)
    }
}

impl From<PhaseError> for CliError {
    fn from(e: PhaseError) -> CliError {
        match e {
            PhaseError::Symbol(s) => s.into(),
            PhaseError::OrderExceeded { .. } => config("phase", e),
            PhaseError::NoConvergence { .. } | PhaseError::Invalid(_) => numerical("phase", e),
        }
    }
}

impl From<EikonalError> for CliError {
    fn from(e: EikonalError) -> CliError {
        match e {
            EikonalError::Symbol(s) => s.into(),
            EikonalError::TimeOrder { .. } | EikonalError::InsufficientSamples { .. } => config("eikonal", e),
            EikonalError::Shooting { .. } | EikonalError::Caustic { .. } | EikonalError::Coverage { .. } => numerical("eikonal", e),
        }
    }
}

impl From<MultiError> for CliError {
    fn from(e: MultiError) -> CliError {
        match e {
            MultiError::Phase(p) => p.into(),
            MultiError::MaxIter { .. } => numerical("multiproduct", e),
            _ => config("multiproduct", e),
        }
    }
}

impl From<QuantError> for CliError {
    fn from(e: QuantError) -> CliError {
        match e {
            QuantError::Symbol(s) => s.into(),
            QuantError::Phase(p) => p.into(),
            QuantError::Multi(m) => m.into(),
            QuantError::Singular(_) => numerical("quantize", e),
            QuantError::Grid(_) | QuantError::Precondition(_) => config("quantize", e),
        }
    }
}

impl From<HypError> for CliError {
    fn from(e: HypError) -> CliError {
        match e {
            HypError::Symbol(s) => s.into(),
            HypError::Quant(q) => q.into(),
            HypError::Invalid(_) => config("hyperbolic", e),
            HypError::Eikonal { .. } | HypError::NotDecaying(_) | HypError::Unstable { .. } => numerical("hyperbolic", e),
        }
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.pass {
            0
        } else {
            1
        }
    }
}

/// `--out`, then `SGFIO_OUT`, then the config's `out`, then `sgfio-out`.
pub fn resolve_out(flag: Option<&Path>, env: Option<&str>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// The subcommand named on the command line must agree with the config's.
pub fn resolve_subcommand(flag: Option<Subcommand>, cfg: &ExperimentConfig) -> Result<Subcommand, CliError> {
    match (flag, cfg.subcommand) {
        (Some(a), Some(b)) if a != b => Err(CliError::Config(format!("subcommand: command line says `{a}`, config says `{b}`"))),
        (Some(a), _) | (None, Some(a)) => Ok(a),
        (None, None) => Err(CliError::Config("subcommand: give it on the command line or in the config".into())),
    }
}

/// Run one experiment and write its artifacts into `out_dir`.
pub fn execute(sub: Subcommand, cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, CliError> {
    let mut art = commands::run(sub, cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let mut names = Vec::new();
    for t in &art.tables {
        t.write(out_dir).map_err(|e| io(&out_dir.join(&t.name), e))?;
        names.push(t.name.clone());
    }
    for (name, svg) in &art.plots {
        let path = out_dir.join(name);
        std::fs::write(&path, svg).map_err(|e| io(&path, e))?;
        names.push(name.clone());
    }
    art.report.artifacts = names;
    let path = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&art.report).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| io(&path, e))?;
    Ok(Outcome { report: art.report, out_dir: out_dir.to_path_buf() })
}

/// Load the config, resolve the output directory and run.
pub fn run(sub: Option<Subcommand>, config_path: &Path, serial: bool, out: Option<&Path>) -> Result<Outcome, CliError> {
    let cfg = ExperimentConfig::load(config_path).map_err(CliError::Config)?;
    let sub = resolve_subcommand(sub, &cfg)?;
    par::set_serial(serial || cfg.serial);
    let env = std::env::var(OUT_ENV).ok();
    let out_dir = resolve_out(out, env.as_deref(), &cfg);
    execute(sub, &cfg, &out_dir)
}
