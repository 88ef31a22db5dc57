//! Experiment configuration: the JSON schema read by every subcommand.
//!
//! Every block has defaults, so `{"subcommand": "verify", "phase": "x*xi"}`
//! is a complete config. Unknown keys are rejected.

use crate::quantize::BasisSpec;
use crate::symbols::SgSymbol;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Eikonal,
    Multiprod,
    Compose,
    Invert,
    Hyperbolic,
    Verify,
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subcommand::Eikonal => "eikonal",
            Subcommand::Multiprod => "multiprod",
            Subcommand::Compose => "compose",
            Subcommand::Invert => "invert",
            Subcommand::Hyperbolic => "hyperbolic",
            Subcommand::Verify => "verify",
        })
    }
}

/// Sample grid on `[-lx, lx] x [-lxi, lxi]` for phase and symbol work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    pub lx: f64,
    pub lxi: f64,
    pub nx: usize,
    pub nxi: usize,
    /// Points per axis of the coarse grid used by pointwise structure checks.
    pub coarse: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock { lx: 4.0, lxi: 4.0, nx: 17, nxi: 17, coarse: 5 }
    }
}

/// Periodic quantization grid: `n` points on `[-l, l)`; the frequency range
/// follows from the DFT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantBlock {
    pub n: usize,
    pub l: f64,
}

impl Default for QuantBlock {
    fn default() -> Self {
        QuantBlock { n: 256, l: 12.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeBlock {
    pub t: f64,
    pub s: f64,
    /// Horizon of the hyperbolic problem.
    pub t0: f64,
    /// Time steps on `[0, t0]`.
    pub k: usize,
    /// Values of `t - s` for the linear-growth fit of `||J||_0`.
    pub sweep: Vec<f64>,
}

impl Default for TimeBlock {
    fn default() -> Self {
        TimeBlock { t: 0.1, s: 0.0, t0: 0.1, k: 16, sweep: Vec::new() }
    }
}

/// Every threshold used by a check, with its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Shooting match `|q(t) - x|`, relative to `max(1, |x|)`. Default 1e-12.
    pub shoot: f64,
    /// RK4 step of pointwise shooting. Default 1e-3.
    pub eikonal_h: f64,
    /// RK4 step of characteristic sweeps over quantization grids. Default 1e-2.
    pub sweep_h: f64,
    /// Launch points per grid spacing in sweeps. Default 2.
    pub sweep_refine: usize,
    /// Time step of the forward/backward eikonal residual stencils. Default 1e-3.
    pub fd_step: f64,
    /// Eikonal forward/backward residuals. Default 1e-4.
    pub eikonal_residual: f64,
    /// Agreement with a closed-form `exact` expression. Default 1e-6.
    pub closed_form: f64,
    /// Relative spread of `||J||_0 / (t - s)` over the sweep. Default 0.2.
    pub linear_fit: f64,
    /// Fixed-point tolerance of the critical-point solver. Default 1e-12.
    pub fixed_point: f64,
    /// Fixed-point iteration cap. Default 200.
    pub max_iter: usize,
    /// Derivative relations of a multi-product. Default 1e-5.
    pub derivative_relation: f64,
    /// Associativity of a multi-product. Default 1e-5.
    pub associativity: f64,
    /// Product against an `expected` phase. Default 1e-5.
    pub product_match: f64,
    /// Random restarts must land within this many fixed-point tolerances. Default 10.
    pub restart_factor: f64,
    /// Number of random restarts. Default 4.
    pub restarts: usize,
    /// Inverse residual of `I_phi`. Default 1e-3.
    pub inverse: f64,
    /// `sup |p - 1|` when the composed symbol is expected to be 1. Default 1e-3.
    pub unit_symbol: f64,
    /// Bound on `sup |p|` and its difference quotients. Default 10.
    pub symbol_bound: f64,
    /// Chain factorization residual. Default 1e-2.
    pub factorization: f64,
    /// Constants `C_0, C_1` of the seminorm product inequality. Default [2, 8].
    pub seminorm_c: [f64; 2],
    /// Picard stopping norm. Default 1e-10.
    pub picard: f64,
    /// Telescoping identity residual. Default 1e-3.
    pub telescoping: f64,
    /// `| ||L E_N|| - ||int W_1 W_N|| |`. Default 1e-3.
    pub last_term: f64,
    /// Relative semigroup residual. Default 1e-2.
    pub semigroup: f64,
    /// Relative L2 error against `exact` solutions. Default 1e-3.
    pub exact: f64,
    /// Relative L2 error against the reference solver. Default 1e-2.
    pub reference: f64,
    /// Bound on the Sobolev ratios of the well-posedness check. Default 20.
    pub wellposed_bound: f64,
    /// Bound on the symbol seminorm in `verify`. Default 10.
    pub order_bound: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            shoot: 1e-12,
            eikonal_h: 1e-3,
            sweep_h: 1e-2,
            sweep_refine: 2,
            fd_step: 1e-3,
            eikonal_residual: 1e-4,
            closed_form: 1e-6,
            linear_fit: 0.2,
            fixed_point: 1e-12,
            max_iter: 200,
            derivative_relation: 1e-5,
            associativity: 1e-5,
            product_match: 1e-5,
            restart_factor: 10.0,
            restarts: 4,
            inverse: 1e-3,
            unit_symbol: 1e-3,
            symbol_bound: 10.0,
            factorization: 1e-2,
            seminorm_c: [2.0, 8.0],
            picard: 1e-10,
            telescoping: 1e-3,
            last_term: 1e-3,
            semigroup: 1e-2,
            exact: 1e-3,
            reference: 1e-2,
            wellposed_bound: 20.0,
            order_bound: 10.0,
        }
    }
}

impl Tolerances {
    fn positive(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("shoot", self.shoot),
            ("eikonal_h", self.eikonal_h),
            ("sweep_h", self.sweep_h),
            ("fd_step", self.fd_step),
            ("eikonal_residual", self.eikonal_residual),
            ("closed_form", self.closed_form),
            ("linear_fit", self.linear_fit),
            ("fixed_point", self.fixed_point),
            ("derivative_relation", self.derivative_relation),
            ("associativity", self.associativity),
            ("product_match", self.product_match),
            ("restart_factor", self.restart_factor),
            ("inverse", self.inverse),
            ("unit_symbol", self.unit_symbol),
            ("symbol_bound", self.symbol_bound),
            ("factorization", self.factorization),
            ("seminorm_c[0]", self.seminorm_c[0]),
            ("seminorm_c[1]", self.seminorm_c[1]),
            ("picard", self.picard),
            ("telescoping", self.telescoping),
            ("last_term", self.last_term),
            ("semigroup", self.semigroup),
            ("exact", self.exact),
            ("reference", self.reference),
            ("wellposed_bound", self.wellposed_bound),
            ("order_bound", self.order_bound),
        ]
    }
}

/// A symbol: a builtin name or expression with default orders, or an object
/// with declared orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SymbolSpec {
    Text(String),
    Full(SymbolObject),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolObject {
    pub expr: String,
    pub m: Option<f64>,
    pub mu: Option<f64>,
}

impl SymbolSpec {
    pub fn text(&self) -> &str {
        match self {
            SymbolSpec::Text(t) => t,
            SymbolSpec::Full(o) => &o.expr,
        }
    }

    /// Build with `orders` standing in for any order the config leaves out.
    pub fn build(&self, orders: (f64, f64)) -> Result<SgSymbol, String> {
        let (text, m, mu) = match self {
            SymbolSpec::Text(t) => (t.as_str(), None, None),
            SymbolSpec::Full(o) => (o.expr.as_str(), o.m, o.mu),
        };
        if let Some(b) = SgSymbol::builtin(text) {
            if m.is_none() && mu.is_none() {
                return Ok(b);
            }
        }
        let (m, mu) = (m.unwrap_or(orders.0), mu.unwrap_or(orders.1));
        if !(m.is_finite() && mu.is_finite()) {
            return Err(format!("symbol {text:?}: declared orders must be finite"));
        }
        SgSymbol::parse(text, m, mu).map_err(|e| format!("symbol {text:?}: {e}"))
    }
}

/// A phase: an expression in `x, xi`, or an object naming either an
/// expression or an eikonal problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhaseSpec {
    Text(String),
    Full(PhaseObject),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseObject {
    pub expr: Option<String>,
    /// Hamiltonian `a(t, x, xi)` of an eikonal phase.
    pub eikonal: Option<SymbolSpec>,
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub s: f64,
    /// Regularity constant to use instead of the certified one.
    pub tau: Option<f64>,
}

impl PhaseSpec {
    pub fn tau(&self) -> Option<f64> {
        match self {
            PhaseSpec::Text(_) => None,
            PhaseSpec::Full(o) => o.tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WellPosedBlock {
    pub r: f64,
    pub ell: f64,
    pub samples: usize,
}

impl Default for WellPosedBlock {
    fn default() -> Self {
        WellPosedBlock { r: 1.0, ell: 1.0, samples: 8 }
    }
}

/// `D_t W + diag(lambda) W + R W = F` with data `W(0) = G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub lambdas: Vec<SymbolSpec>,
    /// `m x m` coupling entries; `null` for zero.
    #[serde(default)]
    pub coupling: Vec<Vec<Option<SymbolSpec>>>,
    #[serde(default = "one")]
    pub eps: f64,
    /// Initial data per component, expressions in `x`.
    pub initial: Vec<String>,
    /// Forcing per component, expressions in `t, x`.
    #[serde(default)]
    pub forcing: Vec<String>,
    /// Closed-form solution per component, expressions in `t, x`.
    #[serde(default)]
    pub exact: Vec<String>,
    #[serde(default = "yes")]
    pub reference: bool,
    pub reference_steps: Option<usize>,
    pub wellposedness: Option<WellPosedBlock>,
    #[serde(default = "picard_cap")]
    pub picard_cap: usize,
    #[serde(default = "hyp_eikonal_h")]
    pub eikonal_h: f64,
    #[serde(default = "two")]
    pub eikonal_refine: usize,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn picard_cap() -> usize {
    8
}

fn hyp_eikonal_h() -> f64 {
    1e-2
}

fn two() -> usize {
    2
}

fn plots_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub subcommand: Option<Subcommand>,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub quant: QuantBlock,
    #[serde(default)]
    pub time: TimeBlock,
    /// Hamiltonian for `eikonal`, optional symbol for `verify`.
    pub symbol: Option<SymbolSpec>,
    /// Closed-form phase for `eikonal`, an expression in `t, s, x, xi`.
    pub exact: Option<String>,
    /// Phase for `verify` and `invert`.
    pub phase: Option<PhaseSpec>,
    /// Chain for `multiprod` and `compose`, leftmost first.
    #[serde(default)]
    pub phases: Vec<PhaseSpec>,
    /// Amplitudes of the `compose` factors; all `1` when empty.
    #[serde(default)]
    pub amplitudes: Vec<SymbolSpec>,
    /// Phase the `multiprod` product should equal.
    pub expected: Option<PhaseSpec>,
    /// Whether the composed symbol should be identically 1.
    #[serde(default)]
    pub expect_unit_symbol: bool,
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub basis: BasisSpec,
    /// Seminorm index `l` for certificates.
    #[serde(default)]
    pub ell: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub serial: bool,
    #[serde(default = "plots_default")]
    pub plots: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            format!("{}: {}", if path == "." { "<root>".to_string() } else { path }, e.inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in self.tolerances.positive() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("tolerances.{name}: must be positive and finite, got {v}"));
            }
        }
        if self.tolerances.max_iter == 0 {
            return Err("tolerances.max_iter: must be at least 1".into());
        }
        if self.tolerances.sweep_refine == 0 {
            return Err("tolerances.sweep_refine: must be at least 1".into());
        }
        let g = &self.grid;
        if !(g.lx > 0.0 && g.lxi > 0.0 && g.lx.is_finite() && g.lxi.is_finite()) {
            return Err(format!("grid: ranges must be positive, got lx = {}, lxi = {}", g.lx, g.lxi));
        }
        if g.nx < 3 || g.nxi < 3 || g.coarse < 3 {
            return Err("grid: need at least 3 points per axis".into());
        }
        if self.quant.n < 4 || self.quant.n % 2 != 0 || !(self.quant.l > 0.0) {
            return Err(format!("quant: need even n >= 4 and l > 0, got n = {}, l = {}", self.quant.n, self.quant.l));
        }
        let t = &self.time;
        for (name, v) in [("t", t.t), ("s", t.s), ("t0", t.t0)] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("time.{name}: must be finite and non-negative, got {v}"));
            }
        }
        if t.sweep.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err("time.sweep: entries must be positive".into());
        }
        if let Some(sys) = &self.system {
            if !(0.0..=1.0).contains(&sys.eps) {
                return Err(format!("system.eps: must lie in [0, 1], got {}", sys.eps));
            }
            if !(sys.eikonal_h > 0.0) {
                return Err("system.eikonal_h: must be positive".into());
            }
        }
        Ok(())
    }
}
