//! Phase functions, the perturbation `J = phi - x*xi`, its seminorms, and
//! certification of the regular phase classes.

use crate::par;
use crate::symbols::{ang, SampleGrid, SgSymbol, SymbolError, SymbolOptions};
use serde::Serialize;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhaseError {
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error("phase derivative of total order {requested} exceeds cap {cap}")]
    OrderExceeded { requested: usize, cap: usize },
    #[error("{what} did not converge at (x, xi) = ({x}, {xi}): {detail}")]
    NoConvergence { what: &'static str, x: f64, xi: f64, detail: String },
    #[error("{0}")]
    Invalid(String),
}

/// Anything that can serve as a phase `phi(x, xi)` with derivatives.
pub trait PhaseSource: Send + Sync + fmt::Debug {
    fn value(&self, x: f64, xi: f64) -> Result<f64, PhaseError>;

    /// `(phi'_x, phi'_xi)`.
    fn grad(&self, x: f64, xi: f64) -> Result<(f64, f64), PhaseError> {
        Ok((self.derivative(1, 0, x, xi)?, self.derivative(0, 1, x, xi)?))
    }

    /// `(phi, phi'_x, phi'_xi)` in one call; sources that solve for all
    /// three at once override this.
    fn value_grad(&self, x: f64, xi: f64) -> Result<(f64, f64, f64), PhaseError> {
        let (px, pxi) = self.grad(x, xi)?;
        Ok((self.value(x, xi)?, px, pxi))
    }

    /// `d_x^nx d_xi^nxi phi`.
    fn derivative(&self, nx: usize, nxi: usize, x: f64, xi: f64) -> Result<f64, PhaseError>;

    fn max_order(&self) -> usize;

    fn describe(&self) -> String;
}

/// Derivatives of `x*xi`.
#[inline]
pub fn xxi_derivative(nx: usize, nxi: usize, x: f64, xi: f64) -> f64 {
    match (nx, nxi) {
        (0, 0) => x * xi,
        (1, 0) => xi,
        (0, 1) => x,
        (1, 1) => 1.0,
        _ => 0.0,
    }
}

/// Phase given by an expression in `x` and `xi` (evaluated at `t = s = 0`).
#[derive(Debug, Clone)]
pub struct ExprPhase {
    sym: SgSymbol,
}

impl ExprPhase {
    pub fn parse(text: &str) -> Result<ExprPhase, PhaseError> {
        Ok(ExprPhase { sym: SgSymbol::parse(text, 1.0, 1.0)? })
    }

    pub fn parse_with(text: &str, opts: SymbolOptions) -> Result<ExprPhase, PhaseError> {
        Ok(ExprPhase { sym: SgSymbol::parse_with(text, 1.0, 1.0, opts)? })
    }
}

impl PhaseSource for ExprPhase {
    fn value(&self, x: f64, xi: f64) -> Result<f64, PhaseError> {
        Ok(self.sym.eval(0.0, 0.0, x, xi)?)
    }

    fn derivative(&self, nx: usize, nxi: usize, x: f64, xi: f64) -> Result<f64, PhaseError> {
        Ok(self.sym.dxx(nx, nxi, 0.0, 0.0, x, xi)?)
    }

    fn max_order(&self) -> usize {
        self.sym.max_order()
    }

    fn describe(&self) -> String {
        self.sym.source().to_string()
    }
}

/// `x*xi + c*J` for a base phase with perturbation `J`.
#[derive(Debug, Clone)]
struct ScaledPerturbation {
    base: PhaseFunction,
    c: f64,
}

impl PhaseSource for ScaledPerturbation {
    fn value(&self, x: f64, xi: f64) -> Result<f64, PhaseError> {
        Ok(x * xi + self.c * self.base.j_derivative(0, 0, x, xi)?)
    }

    fn derivative(&self, nx: usize, nxi: usize, x: f64, xi: f64) -> Result<f64, PhaseError> {
        Ok(xxi_derivative(nx, nxi, x, xi) + self.c * self.base.j_derivative(nx, nxi, x, xi)?)
    }

    fn max_order(&self) -> usize {
        self.base.max_order()
    }

    fn describe(&self) -> String {
        format!("x*xi + {}*J[{}]", self.c, self.base.describe())
    }
}

/// Shared handle to a phase source with optional certification data.
#[derive(Clone)]
pub struct PhaseFunction {
    src: Arc<dyn PhaseSource>,
    pub certificate: Option<Certificate>,
}

impl fmt::Debug for PhaseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhaseFunction").field("src", &self.describe()).field("certificate", &self.certificate).finish()
    }
}

impl PhaseFunction {
    pub fn new<S: PhaseSource + 'static>(src: S) -> PhaseFunction {
        PhaseFunction { src: Arc::new(src), certificate: None }
    }

    pub fn from_arc(src: Arc<dyn PhaseSource>) -> PhaseFunction {
        PhaseFunction { src, certificate: None }
    }

    pub fn parse(text: &str) -> Result<PhaseFunction, PhaseError> {
        Ok(PhaseFunction::new(ExprPhase::parse(text)?))
    }

    /// The trivial phase `x*xi`.
    pub fn identity() -> PhaseFunction {
        PhaseFunction::parse("x*xi").expect("identity phase parses")
    }

    /// `x*xi + c*xi`; the associated operator translates by `c`.
    pub fn translation(c: f64) -> PhaseFunction {
        PhaseFunction::parse(&format!("x*xi + {}", crate::expr::Expr::Mul(Box::new(crate::expr::Expr::num(c)), Box::new(crate::expr::Expr::Var(crate::expr::Var::Xi)))))
            .expect("translation phase parses")
    }

    /// `x*xi + c*J`, where `J` is this phase's perturbation.
    pub fn with_scaled_perturbation(&self, c: f64) -> PhaseFunction {
        PhaseFunction::new(ScaledPerturbation { base: self.clone(), c })
    }

    pub fn source(&self) -> &Arc<dyn PhaseSource> {
        &self.src
    }

    pub fn value(&self, x: f64, xi: f64) -> Result<f64, PhaseError> {
        self.src.value(x, xi)
    }

    pub fn grad(&self, x: f64, xi: f64) -> Result<(f64, f64), PhaseError> {
        self.src.grad(x, xi)
    }

    pub fn value_grad(&self, x: f64, xi: f64) -> Result<(f64, f64, f64), PhaseError> {
        self.src.value_grad(x, xi)
    }

    pub fn derivative(&self, nx: usize, nxi: usize, x: f64, xi: f64) -> Result<f64, PhaseError> {
        if nx + nxi > self.src.max_order() {
            return Err(PhaseError::OrderExceeded { requested: nx + nxi, cap: self.src.max_order() });
        }
        self.src.derivative(nx, nxi, x, xi)
    }

    /// Derivative of `J = phi - x*xi`.
    pub fn j_derivative(&self, nx: usize, nxi: usize, x: f64, xi: f64) -> Result<f64, PhaseError> {
        Ok(self.derivative(nx, nxi, x, xi)? - xxi_derivative(nx, nxi, x, xi))
    }

    /// `(J'_x, J'_xi)`.
    pub fn j_grad(&self, x: f64, xi: f64) -> Result<(f64, f64), PhaseError> {
        let (px, pxi) = self.grad(x, xi)?;
        Ok((px - xi, pxi - x))
    }

    pub fn max_order(&self) -> usize {
        self.src.max_order()
    }

    pub fn describe(&self) -> String {
        self.src.describe()
    }

    pub fn certified(mut self, g: &SampleGrid, ell: usize) -> Result<PhaseFunction, PhaseError> {
        self.certificate = Some(certify_regular(&self, g, ell)?);
        Ok(self)
    }
}

/// Nested central differences with one Richardson step, built on a base
/// derivative that is known exactly up to total order `exact_order`.
pub(crate) fn fd_derivative<F>(base: F, exact_order: usize, nx: usize, nxi: usize, x: f64, xi: f64, step: f64) -> Result<f64, PhaseError>
where
    F: Fn(usize, usize, f64, f64) -> Result<f64, PhaseError>,
{
    if nx + nxi <= exact_order {
        return base(nx, nxi, x, xi);
    }
    // take as many x-derivatives as possible from the exact part
    let bx = nx.min(exact_order);
    let bxi = (exact_order - bx).min(nxi);
    let (dx, dxi) = (nx - bx, nxi - bxi);
    let stencil = |h: f64| -> Result<f64, PhaseError> {
        let mut acc = 0.0;
        for k in 0..=dx {
            for l in 0..=dxi {
                let w = binom(dx, k) * binom(dxi, l) * if (k + l) % 2 == 0 { 1.0 } else { -1.0 };
                let px = x + (dx as f64 - 2.0 * k as f64) * h;
                let pxi = xi + (dxi as f64 - 2.0 * l as f64) * h;
                acc += w * base(bx, bxi, px, pxi)?;
            }
        }
        Ok(acc / (2.0 * h).powi((dx + dxi) as i32))
    };
    let coarse = stencil(step)?;
    let fine = stencil(step / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Grid values of the J-seminorms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JSeminorms {
    pub ell: usize,
    /// Sum over `2 <= alpha+beta <= 2+ell` of the weighted sups.
    pub two_ell: f64,
    /// Sup over `alpha+beta <= 1` plus `two_ell`.
    pub norm_ell: f64,
    /// Max of the weighted sups over `alpha+beta <= 2`: the regularity constant.
    pub tau: f64,
}

/// Per-multi-index weighted sups of J: entry `[beta][alpha]` holds
/// `sup |d_x^beta d_xi^alpha J| / (<x>^{1-beta} <xi>^{1-alpha})`.
pub fn j_weighted_sups(phi: &PhaseFunction, order: usize, g: &SampleGrid) -> Result<Vec<Vec<f64>>, PhaseError> {
    if order > phi.max_order() {
        return Err(PhaseError::OrderExceeded { requested: order, cap: phi.max_order() });
    }
    let rows = par::try_map(g.nx, |i| {
        let x = g.x(i);
        let wx = ang(x);
        let mut sup = vec![vec![0.0f64; order + 1]; order + 1];
        for j in 0..g.nxi {
            let xi = g.xi(j);
            let wxi = ang(xi);
            for beta in 0..=order {
                for alpha in 0..=(order - beta) {
                    let d = phi.j_derivative(beta, alpha, x, xi)?;
                    let v = d.abs() / (wx.powi(1 - beta as i32) * wxi.powi(1 - alpha as i32));
                    if v > sup[beta][alpha] {
                        sup[beta][alpha] = v;
                    }
                }
            }
        }
        Ok::<_, PhaseError>(sup)
    })?;
    let mut sup = vec![vec![0.0f64; order + 1]; order + 1];
    for r in rows {
        for beta in 0..=order {
            for alpha in 0..=(order - beta) {
                sup[beta][alpha] = sup[beta][alpha].max(r[beta][alpha]);
            }
        }
    }
    Ok(sup)
}

pub fn j_seminorm(phi: &PhaseFunction, ell: usize, g: &SampleGrid) -> Result<JSeminorms, PhaseError> {
    let order = 2 + ell;
    let sup = j_weighted_sups(phi, order, g)?;
    let mut low = 0.0f64;
    let mut two_ell = 0.0;
    let mut tau = 0.0f64;
    for beta in 0..=order {
        for alpha in 0..=(order - beta) {
            let k = alpha + beta;
            let v = sup[beta][alpha];
            if k <= 1 {
                low = low.max(v);
            } else {
                two_ell += v;
            }
            if k <= 2 {
                tau = tau.max(v);
            }
        }
    }
    Ok(JSeminorms { ell, two_ell, norm_ell: low + two_ell, tau })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PhaseClass {
    #[serde(rename = "P_r(tau,ell)")]
    RegularEll,
    #[serde(rename = "P_r(tau)")]
    Regular,
    #[serde(rename = "P")]
    Phase,
    #[serde(rename = "fail")]
    Fail,
}

impl fmt::Display for PhaseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseClass::RegularEll => "P_r(tau,ell)",
            PhaseClass::Regular => "P_r(tau)",
            PhaseClass::Phase => "P",
            PhaseClass::Fail => "fail",
        })
    }
}

/// Ratio band check on the outer annulus of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandCheck {
    pub lo: f64,
    pub hi: f64,
    /// Extremes of `<phi'_x>/<xi>` on the annulus.
    pub x_ratio: (f64, f64),
    /// Extremes of `<phi'_xi>/<x>` on the annulus.
    pub xi_ratio: (f64, f64),
    pub points: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    /// Grid infimum of `|phi''_{x xi}|`.
    pub r: f64,
    /// Regularity constant: max weighted sup of J over orders `<= 2`.
    pub tau: f64,
    pub ell: usize,
    /// `||J||_ell`; the phase is in `P_r(tau_ell, ell)` when this is below 1.
    pub tau_ell: f64,
    pub class: PhaseClass,
    pub band: BandCheck,
}

pub const ANNULUS_FRACTION: f64 = 0.2;
pub const BAND: (f64, f64) = (0.25, 4.0);

pub fn band_check(phi: &PhaseFunction, g: &SampleGrid) -> Result<BandCheck, PhaseError> {
    let inner = 1.0 - ANNULUS_FRACTION;
    let rows = par::try_map(g.nx, |i| {
        let x = g.x(i);
        let mut acc = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, 0usize);
        for j in 0..g.nxi {
            let xi = g.xi(j);
            if (x.abs() / g.lx).max(xi.abs() / g.lxi) < inner {
                continue;
            }
            let (px, pxi) = phi.grad(x, xi)?;
            let rx = ang(px) / ang(xi);
            let rxi = ang(pxi) / ang(x);
            acc.0 = acc.0.min(rx);
            acc.1 = acc.1.max(rx);
            acc.2 = acc.2.min(rxi);
            acc.3 = acc.3.max(rxi);
            acc.4 += 1;
        }
        Ok::<_, PhaseError>(acc)
    })?;
    let mut acc = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, 0usize);
    for r in rows {
        acc.0 = acc.0.min(r.0);
        acc.1 = acc.1.max(r.1);
        acc.2 = acc.2.min(r.2);
        acc.3 = acc.3.max(r.3);
        acc.4 += r.4;
    }
    let (lo, hi) = BAND;
    let pass = acc.4 > 0 && acc.0 >= lo && acc.1 <= hi && acc.2 >= lo && acc.3 <= hi;
    Ok(BandCheck { lo, hi, x_ratio: (acc.0, acc.1), xi_ratio: (acc.2, acc.3), points: acc.4, pass })
}

pub fn mixed_inf(phi: &PhaseFunction, g: &SampleGrid) -> Result<f64, PhaseError> {
    let rows = par::try_map(g.nx, |i| {
        let x = g.x(i);
        let mut m = f64::INFINITY;
        for j in 0..g.nxi {
            m = m.min(phi.derivative(1, 1, x, g.xi(j))?.abs());
        }
        Ok::<_, PhaseError>(m)
    })?;
    Ok(rows.into_iter().fold(f64::INFINITY, f64::min))
}

/// Grid certification of the regular phase classes.
pub fn certify_regular(phi: &PhaseFunction, g: &SampleGrid, ell: usize) -> Result<Certificate, PhaseError> {
    let sn = j_seminorm(phi, ell, g)?;
    let r = mixed_inf(phi, g)?;
    let band = band_check(phi, g)?;
    let class = if !band.pass || r <= 0.0 {
        PhaseClass::Fail
    } else if sn.tau < 1.0 && sn.norm_ell < 1.0 {
        PhaseClass::RegularEll
    } else if sn.tau < 1.0 {
        PhaseClass::Regular
    } else {
        PhaseClass::Phase
    };
    Ok(Certificate { r, tau: sn.tau, ell, tau_ell: sn.norm_ell, class, band })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> SampleGrid {
        SampleGrid::square(4.0, 33)
    }

    #[test]
    fn identity_phase_is_trivial() {
        let phi = PhaseFunction::identity();
        let sn = j_seminorm(&phi, 2, &g()).unwrap();
        assert_eq!((sn.two_ell, sn.norm_ell, sn.tau), (0.0, 0.0, 0.0));
        let c = certify_regular(&phi, &g(), 1).unwrap();
        assert_eq!(c.r, 1.0);
        assert_eq!(c.tau, 0.0);
        assert_eq!(c.class, PhaseClass::RegularEll);
    }

    #[test]
    fn translation_phase() {
        let phi = PhaseFunction::translation(0.05);
        assert_eq!(phi.value(2.0, 3.0).unwrap(), 6.0 + 0.05 * 3.0);
        let sn = j_seminorm(&phi, 0, &g()).unwrap();
        assert!((sn.norm_ell - 0.05).abs() < 1e-15);
        assert!((sn.tau - 0.05).abs() < 1e-15);
        let c = certify_regular(&phi, &g(), 0).unwrap();
        assert_eq!(c.r, 1.0);
        let neg = PhaseFunction::translation(-0.25);
        assert_eq!(neg.value(0.0, 2.0).unwrap(), -0.5);
    }

    #[test]
    fn fd_derivative_recovers_polynomial() {
        let f = |nx: usize, nxi: usize, x: f64, xi: f64| -> Result<f64, PhaseError> {
            // phi = x^3 xi^2, exact up to order 1
            Ok(match (nx, nxi) {
                (0, 0) => x.powi(3) * xi * xi,
                (1, 0) => 3.0 * x * x * xi * xi,
                (0, 1) => 2.0 * x.powi(3) * xi,
                _ => unreachable!(),
            })
        };
        let v = fd_derivative(f, 1, 2, 1, 0.7, -1.2, 1e-2).unwrap();
        assert!((v - 6.0 * 0.7 * 2.0 * -1.2).abs() < 1e-9);
        let v = fd_derivative(f, 1, 1, 2, 0.7, -1.2, 1e-2).unwrap();
        assert!((v - 6.0 * 0.49).abs() < 1e-9);
    }

    #[test]
    fn order_cap_enforced() {
        let phi = PhaseFunction::new(ExprPhase::parse_with("x*xi", SymbolOptions { max_order: 2, ..Default::default() }).unwrap());
        assert!(matches!(j_seminorm(&phi, 1, &g()), Err(PhaseError::OrderExceeded { .. })));
    }
}
