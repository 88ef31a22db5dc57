//! Multi-products `phi_1 # ... # phi_{M+1}` of regular phases, computed from
//! the critical points of the phase sum by a contraction fixed point.
//!
//! With `Y_0 = x`, `N_{M+1} = xi` the critical point solves
//! `Y_j = phi'_{j,xi}(Y_{j-1}, N_j)` and `N_j = phi'_{j+1,x}(Y_j, N_{j+1})`.
//! The unknowns are the increments `y_k = Y_k - Y_{k-1}` and
//! `eta_k = N_k - N_{k+1}`, iterated as
//! `y_k <- J'_{k,xi}(x + z^{k-1}, xi + zeta^k)`,
//! `eta_k <- J'_{k+1,x}(x + z^k, xi + zeta^{k+1})`
//! where `z^j`, `zeta^j` are the partial sums.

use crate::par;
use crate::phase::{certify_regular, fd_derivative, Certificate, PhaseClass, PhaseError, PhaseFunction, PhaseSource};
use crate::symbols::{ang, SampleGrid};
use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 200;
/// Updates below this size are too close to roundoff to give a meaningful
/// contraction ratio.
pub const RATIO_FLOOR: f64 = 1e-11;
/// Updates that stop shrinking within this multiple of `tol` are at the
/// noise floor of the phase evaluations and count as converged.
pub const STALL_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MultiError {
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("chain needs at least two phases, got {0}")]
    TooShort(usize),
    #[error("chain is not admissible: sum of tau_j = {tau0} is not below 1/4")]
    Inadmissible { tau0: f64 },
    #[error("phase {index} has no certificate")]
    Uncertified { index: usize },
    #[error("phase {index} is certified {class}, not regular")]
    NotRegular { index: usize, class: PhaseClass },
    #[error("invalid tau_{index} = {tau}")]
    BadTau { index: usize, tau: f64 },
    #[error("fixed point did not converge at (x, xi) = ({x}, {xi}) in {iterations} iterations (last update {update:e}); tau_j is probably mis-certified")]
    MaxIter { x: f64, xi: f64, iterations: usize, update: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Ordered phases `phi_1, ..., phi_{M+1}` with regularity constants `tau_j`.
#[derive(Debug, Clone)]
pub struct PhaseChain {
    phases: Vec<PhaseFunction>,
    taus: Vec<f64>,
}

impl PhaseChain {
    pub fn new(phases: Vec<PhaseFunction>, taus: Vec<f64>) -> Result<PhaseChain, MultiError> {
        if phases.len() < 2 {
            return Err(MultiError::TooShort(phases.len()));
        }
        if taus.len() != phases.len() {
            return Err(MultiError::Precondition(format!("{} phases but {} tau values", phases.len(), taus.len())));
        }
        for (index, &tau) in taus.iter().enumerate() {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(MultiError::BadTau { index, tau });
            }
        }
        let tau0: f64 = taus.iter().sum();
        if tau0 >= 0.25 {
            return Err(MultiError::Inadmissible { tau0 });
        }
        Ok(PhaseChain { phases, taus })
    }

    /// Take `tau_j` from each phase's certificate.
    pub fn from_certified(phases: Vec<PhaseFunction>) -> Result<PhaseChain, MultiError> {
        let mut taus = Vec::with_capacity(phases.len());
        for (index, p) in phases.iter().enumerate() {
            let c = p.certificate.ok_or(MultiError::Uncertified { index })?;
            if !matches!(c.class, PhaseClass::Regular | PhaseClass::RegularEll) {
                return Err(MultiError::NotRegular { index, class: c.class });
            }
            taus.push(c.tau);
        }
        PhaseChain::new(phases, taus)
    }

    /// Certify every phase on `g` and build the chain.
    pub fn certify(phases: Vec<PhaseFunction>, g: &SampleGrid, ell: usize) -> Result<PhaseChain, MultiError> {
        let certified = phases.into_iter().map(|p| p.certified(g, ell)).collect::<Result<Vec<_>, _>>()?;
        PhaseChain::from_certified(certified)
    }

    pub fn phases(&self) -> &[PhaseFunction] {
        &self.phases
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// Number of intermediate variables, one less than the number of phases.
    pub fn m(&self) -> usize {
        self.phases.len() - 1
    }

    pub fn tau0(&self) -> f64 {
        self.taus.iter().sum()
    }

    /// `sum_{j <= k} tau_j`.
    pub fn tau_bar(&self, k: usize) -> f64 {
        self.taus[..k.min(self.taus.len())].iter().sum()
    }
}

/// Critical point at one `(x, xi)`. Vectors are indexed from 0 for
/// `j = 1..M`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub x: f64,
    pub xi: f64,
    /// `Y_1..Y_M`.
    pub y: Vec<f64>,
    /// `N_1..N_M`.
    pub n: Vec<f64>,
    /// `y_k = Y_k - Y_{k-1}`.
    pub dy: Vec<f64>,
    /// `eta_k = N_k - N_{k+1}`.
    pub deta: Vec<f64>,
    /// `z^1..z^M`.
    pub z: Vec<f64>,
    /// `zeta^1..zeta^M`.
    pub zeta: Vec<f64>,
    pub iterations: usize,
    /// Sigma-norm of `T(v) - v` at the returned point.
    pub residual: f64,
    /// Ratios of successive update norms.
    pub ratios: Vec<f64>,
    pub value: f64,
    pub phix: f64,
    pub phixi: f64,
}

/// Worst ratios of the critical-point bounds to their allowed values; all
/// must be at most 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRatios {
    pub increments: f64,
    pub partial_sums: f64,
}

impl CriticalPoint {
    pub fn bound_ratios(&self, chain: &PhaseChain) -> BoundRatios {
        let (wx, wxi) = (ang(self.x), ang(self.xi));
        let ratio = |v: f64, bound: f64| if v == 0.0 { 0.0 } else { v.abs() / bound };
        let mut inc = 0.0f64;
        let mut sums = 0.0f64;
        for k in 0..self.dy.len() {
            inc = inc.max(ratio(self.dy[k], 4.0 / 3.0 * chain.taus[k] * wx));
            inc = inc.max(ratio(self.deta[k], 4.0 / 3.0 * chain.taus[k + 1] * wxi));
            sums = sums.max(ratio(self.z[k], wx / 3.0)).max(ratio(self.zeta[k], wxi / 3.0));
        }
        BoundRatios { increments: inc, partial_sums: sums }
    }
}

/// One pass of the map: evaluate every phase at `(Y_{k-1}, N_k)`.
fn sweep(chain: &PhaseChain, x: f64, xi: f64, dy: &[f64], deta: &[f64], with_values: bool) -> Result<Vec<(f64, f64, f64)>, PhaseError> {
    let m = dy.len();
    let mut z = vec![0.0; m + 1];
    for k in 1..=m {
        z[k] = z[k - 1] + dy[k - 1];
    }
    let mut zeta = vec![0.0; m + 2];
    for k in (1..=m).rev() {
        zeta[k] = zeta[k + 1] + deta[k - 1];
    }
    (1..=m + 1)
        .map(|k| {
            let (px, py) = (x + z[k - 1], xi + zeta[k]);
            let phase = &chain.phases[k - 1];
            if with_values {
                phase.value_grad(px, py)
            } else {
                let (gx, gxi) = phase.grad(px, py)?;
                Ok((0.0, gx, gxi))
            }
        })
        .collect()
}

/// Solve from the zero vector.
pub fn solve_critical(chain: &PhaseChain, x: f64, xi: f64, tol: f64, max_iter: usize) -> Result<CriticalPoint, MultiError> {
    let m = chain.m();
    solve_critical_from(chain, x, xi, (vec![0.0; m], vec![0.0; m]), tol, max_iter)
}

/// Solve from a given `(y, eta)` start.
pub fn solve_critical_from(chain: &PhaseChain, x: f64, xi: f64, start: (Vec<f64>, Vec<f64>), tol: f64, max_iter: usize) -> Result<CriticalPoint, MultiError> {
    let m = chain.m();
    let (mut dy, mut deta) = start;
    if dy.len() != m || deta.len() != m {
        return Err(MultiError::Precondition(format!("start vector has the wrong length for M = {m}")));
    }
    let (wx, wxi) = (ang(x), ang(xi));
    let mut iterations = 0;
    let mut ratios = Vec::new();
    let mut prev: Option<f64> = None;
    loop {
        let ev = sweep(chain, x, xi, &dy, &deta, false)?;
        let mut update = 0.0;
        let z_prev: Vec<f64> = (1..=m).map(|k| dy[..k - 1].iter().sum()).collect();
        let zeta_next: Vec<f64> = (1..=m).map(|k| deta[k..].iter().sum()).collect();
        for k in 1..=m {
            let ny = ev[k - 1].2 - (x + z_prev[k - 1]);
            let neta = ev[k].1 - (xi + zeta_next[k - 1]);
            update += (ny - dy[k - 1]).abs() / wx + (neta - deta[k - 1]).abs() / wxi;
            dy[k - 1] = ny;
            deta[k - 1] = neta;
        }
        let stalled = prev.is_some_and(|p| update >= 0.5 * p && update <= STALL_FACTOR * tol);
        if let Some(p) = prev {
            if p > RATIO_FLOOR {
                ratios.push(update / p);
            }
        }
        prev = Some(update);
        if update <= tol || stalled {
            break;
        }
        iterations += 1;
        if iterations >= max_iter {
            return Err(MultiError::MaxIter { x, xi, iterations, update });
        }
    }
    let ev = sweep(chain, x, xi, &dy, &deta, true)?;
    let mut z = Vec::with_capacity(m);
    let mut acc = 0.0;
    for &v in &dy {
        acc += v;
        z.push(acc);
    }
    let mut zeta = vec![0.0; m];
    let mut acc = 0.0;
    for k in (0..m).rev() {
        acc += deta[k];
        zeta[k] = acc;
    }
    let y: Vec<f64> = z.iter().map(|v| x + v).collect();
    let n: Vec<f64> = zeta.iter().map(|v| xi + v).collect();
    let mut residual = 0.0;
    let mut value = 0.0;
    for k in 1..=m {
        let y_prev = if k == 1 { x } else { y[k - 2] };
        let n_next = if k == m { xi } else { n[k] };
        residual += (ev[k - 1].2 - y_prev - dy[k - 1]).abs() / wx + (ev[k].1 - n_next - deta[k - 1]).abs() / wxi;
        value += ev[k - 1].0 - y[k - 1] * n[k - 1];
    }
    value += ev[m].0;
    Ok(CriticalPoint {
        x,
        xi,
        y,
        n,
        dy,
        deta,
        z,
        zeta,
        iterations,
        residual,
        ratios,
        value,
        phix: ev[0].1,
        phixi: ev[m].2,
    })
}

/// Random point of the set `sum |y_k| <= <x>/3`, `sum |eta_k| <= <xi>/3`.
pub fn random_start<R: Rng>(rng: &mut R, m: usize, x: f64, xi: f64) -> (Vec<f64>, Vec<f64>) {
    let mut draw = |w: f64| {
        let mut v: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l1: f64 = v.iter().map(|a| a.abs()).sum();
        let radius = rng.random::<f64>() * w / 3.0;
        if l1 > 0.0 {
            for a in &mut v {
                *a *= radius / l1;
            }
        }
        v
    };
    let y = draw(ang(x));
    let eta = draw(ang(xi));
    (y, eta)
}

/// The product phase on a tensor grid; off-grid queries solve pointwise.
#[derive(Debug, Clone)]
pub struct MultiProductPhase {
    chain: PhaseChain,
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    xs: Vec<f64>,
    xis: Vec<f64>,
    points: Vec<CriticalPoint>,
}

impl MultiProductPhase {
    pub fn solve(chain: &PhaseChain, xs: &[f64], xis: &[f64], tol: f64, max_iter: usize) -> Result<MultiProductPhase, MultiError> {
        let nxi = xis.len();
        let rows = par::try_map(xs.len(), |i| (0..nxi).map(|j| solve_critical(chain, xs[i], xis[j], tol, max_iter)).collect::<Result<Vec<_>, _>>())?;
        Ok(MultiProductPhase {
            chain: chain.clone(),
            tol,
            max_iter,
            fd_step: 1e-2,
            xs: xs.to_vec(),
            xis: xis.to_vec(),
            points: rows.into_iter().flatten().collect(),
        })
    }

    /// No stored grid: every query is solved pointwise.
    pub fn lazy(chain: &PhaseChain, tol: f64) -> MultiProductPhase {
        MultiProductPhase { chain: chain.clone(), tol, max_iter: DEFAULT_MAX_ITER, fd_step: 1e-2, xs: Vec::new(), xis: Vec::new(), points: Vec::new() }
    }

    pub fn chain(&self) -> &PhaseChain {
        &self.chain
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn xis(&self) -> &[f64] {
        &self.xis
    }

    pub fn points(&self) -> &[CriticalPoint] {
        &self.points
    }

    pub fn point(&self, i: usize, j: usize) -> &CriticalPoint {
        &self.points[i * self.xis.len() + j]
    }

    fn lookup(&self, x: f64, xi: f64) -> Option<&CriticalPoint> {
        let i = self.xs.binary_search_by(|v| v.total_cmp(&x)).ok()?;
        let j = self.xis.binary_search_by(|v| v.total_cmp(&xi)).ok()?;
        Some(self.point(i, j))
    }

    pub fn critical_point(&self, x: f64, xi: f64) -> Result<CriticalPoint, MultiError> {
        match self.lookup(x, xi) {
            Some(p) => Ok(p.clone()),
            None => solve_critical(&self.chain, x, xi, self.tol, self.max_iter),
        }
    }

    fn low_order(&self, x: f64, xi: f64) -> Result<(f64, f64, f64), PhaseError> {
        if let Some(p) = self.lookup(x, xi) {
            return Ok((p.value, p.phix, p.phixi));
        }
        let p = solve_critical(&self.chain, x, xi, self.tol, self.max_iter).map_err(|e| match e {
            MultiError::Phase(p) => p,
            other => PhaseError::NoConvergence { what: "multi-product fixed point", x, xi, detail: other.to_string() },
        })?;
        Ok((p.value, p.phix, p.phixi))
    }

    pub fn into_phase(self) -> PhaseFunction {
        PhaseFunction::from_arc(Arc::new(self))
    }

    /// Worst bound ratios over the stored nodes.
    pub fn bound_ratios(&self) -> BoundRatios {
        let mut out = BoundRatios { increments: 0.0, partial_sums: 0.0 };
        for p in &self.points {
            let r = p.bound_ratios(&self.chain);
            out.increments = out.increments.max(r.increments);
            out.partial_sums = out.partial_sums.max(r.partial_sums);
        }
        out
    }

    /// Largest contraction ratio over the stored nodes.
    pub fn max_contraction(&self) -> f64 {
        self.points.iter().flat_map(|p| p.ratios.iter().copied()).fold(0.0, f64::max)
    }
}

impl PhaseSource for MultiProductPhase {
    fn value(&self, x: f64, xi: f64) -> Result<f64, PhaseError> {
        Ok(self.low_order(x, xi)?.0)
    }

    fn grad(&self, x: f64, xi: f64) -> Result<(f64, f64), PhaseError> {
        let (_, a, b) = self.low_order(x, xi)?;
        Ok((a, b))
    }

    fn value_grad(&self, x: f64, xi: f64) -> Result<(f64, f64, f64), PhaseError> {
        self.low_order(x, xi)
    }

    fn derivative(&self, nx: usize, nxi: usize, x: f64, xi: f64) -> Result<f64, PhaseError> {
        let base = |a: usize, b: usize, px: f64, pxi: f64| -> Result<f64, PhaseError> {
            let v = self.low_order(px, pxi)?;
            Ok(match (a, b) {
                (0, 0) => v.0,
                (1, 0) => v.1,
                _ => v.2,
            })
        };
        fd_derivative(base, 1, nx, nxi, x, xi, self.fd_step)
    }

    fn max_order(&self) -> usize {
        4
    }

    fn describe(&self) -> String {
        let parts: Vec<String> = self.chain.phases.iter().map(|p| p.describe()).collect();
        format!("({})", parts.join(" # "))
    }
}

/// Product of the chain on the nodes of `g`.
pub fn multiproduct(chain: &PhaseChain, g: &SampleGrid, tol: f64) -> Result<PhaseFunction, MultiError> {
    Ok(MultiProductPhase::solve(chain, &g.xs(), &g.xis(), tol, DEFAULT_MAX_ITER)?.into_phase())
}

/// Fitted constants for the increment estimates at derivative orders
/// `(alpha, beta) = (0,0), (1,0), (0,1)` (alpha counts xi-derivatives).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementConstants {
    /// Per `j`: `|d^alpha_xi d^beta_x y_j| / (tau_j <xi>^-alpha <x>^(1-beta))`.
    pub y: Vec<[f64; 3]>,
    /// Per `j`: `|d^alpha_xi d^beta_x eta_j| / (tau_{j+1} <xi>^(1-alpha) <x>^-beta)`.
    pub eta: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    /// `sup |phi'_x - phi'_{1,x}(x, N_1)|` with `phi'_x` from differences of values.
    pub deriv_x: f64,
    /// `sup |phi'_xi - phi'_{M+1,xi}(Y_M, xi)|`, same construction.
    pub deriv_xi: f64,
    /// `sup |(phi_1 # phi_2) # rest - phi_1 # (phi_2 # rest)|` when `M >= 2`.
    pub associativity: Option<f64>,
    pub constants: IncrementConstants,
    pub bounds: BoundRatios,
    pub bounds_hold: bool,
    pub max_contraction: f64,
    pub contraction_bound: f64,
    pub contraction_ok: bool,
    pub tau0: f64,
    pub certificate: Certificate,
    /// `tau(phi) / tau0`.
    pub k: f64,
    pub k_tau0_below_one: bool,
    pub nodes: usize,
}

/// Measurements of the structural properties of a product on the nodes of
/// `g` (which should be coarse: every check solves pointwise).
pub fn verify_structure(mp: &MultiProductPhase, g: &SampleGrid) -> Result<StructureReport, MultiError> {
    let chain = &mp.chain;
    let m = chain.m();
    let tol = mp.tol;
    let nodes: Vec<(f64, f64)> = g.xs().into_iter().flat_map(|x| g.xis().into_iter().map(move |xi| (x, xi))).collect();

    // (a) derivative relations against differences of values
    let h = 1e-3;
    let rows = par::try_map(nodes.len(), |k| {
        let (x, xi) = nodes[k];
        let p = mp.critical_point(x, xi)?;
        let value = |_: usize, _: usize, px: f64, pxi: f64| mp.value(px, pxi);
        let dx = fd_derivative(value, 0, 1, 0, x, xi, h)?;
        let dxi = fd_derivative(value, 0, 0, 1, x, xi, h)?;
        let ex = chain.phases[0].grad(x, p.n.first().copied().unwrap_or(xi))?.0;
        let exi = chain.phases[m].grad(p.y.last().copied().unwrap_or(x), xi)?.1;
        Ok::<_, MultiError>(((dx - ex).abs(), (dxi - exi).abs()))
    })?;
    let deriv_x = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let deriv_xi = rows.iter().map(|r| r.1).fold(0.0, f64::max);

    // (b) associativity
    let associativity = if m >= 2 {
        let ph = &chain.phases;
        let t = &chain.taus;
        let head = PhaseChain::new(ph[..2].to_vec(), t[..2].to_vec())?;
        let left_inner = MultiProductPhase::lazy(&head, tol).into_phase();
        let mut left_phases = vec![left_inner];
        left_phases.extend(ph[2..].iter().cloned());
        let mut left_taus = vec![t[0] + t[1]];
        left_taus.extend(t[2..].iter().copied());
        let left = MultiProductPhase::lazy(&PhaseChain::new(left_phases, left_taus)?, tol);
        let tail = PhaseChain::new(ph[1..].to_vec(), t[1..].to_vec())?;
        let right_inner = MultiProductPhase::lazy(&tail, tol).into_phase();
        let right = MultiProductPhase::lazy(&PhaseChain::new(vec![ph[0].clone(), right_inner], vec![t[0], t[1..].iter().sum()])?, tol);
        let diffs = par::try_map(nodes.len(), |k| {
            let (x, xi) = nodes[k];
            Ok::<_, PhaseError>((left.value(x, xi)? - right.value(x, xi)?).abs())
        })?;
        Some(diffs.into_iter().fold(0.0, f64::max))
    } else {
        None
    };

    // (c) increment estimates at orders <= 1
    let hd = 1e-4;
    let per_node = par::try_map(nodes.len(), |k| {
        let (x, xi) = nodes[k];
        let c = mp.critical_point(x, xi)?;
        let cxp = solve_critical(chain, x + hd, xi, tol, mp.max_iter)?;
        let cxm = solve_critical(chain, x - hd, xi, tol, mp.max_iter)?;
        let cip = solve_critical(chain, x, xi + hd, tol, mp.max_iter)?;
        let cim = solve_critical(chain, x, xi - hd, tol, mp.max_iter)?;
        let (wx, wxi) = (ang(x), ang(xi));
        let fit = |v: f64, tau: f64, w: f64| if v == 0.0 { 0.0 } else { v.abs() / (tau * w) };
        let mut y = Vec::with_capacity(m);
        let mut eta = Vec::with_capacity(m);
        for j in 0..m {
            let (ty, te) = (chain.taus[j], chain.taus[j + 1]);
            y.push([
                fit(c.dy[j], ty, wx),
                fit((cip.dy[j] - cim.dy[j]) / (2.0 * hd), ty, 1.0 / wxi * wx),
                fit((cxp.dy[j] - cxm.dy[j]) / (2.0 * hd), ty, 1.0),
            ]);
            eta.push([
                fit(c.deta[j], te, wxi),
                fit((cip.deta[j] - cim.deta[j]) / (2.0 * hd), te, 1.0),
                fit((cxp.deta[j] - cxm.deta[j]) / (2.0 * hd), te, wxi / wx),
            ]);
        }
        Ok::<_, MultiError>((y, eta))
    })?;
    let mut constants = IncrementConstants { y: vec![[0.0; 3]; m], eta: vec![[0.0; 3]; m] };
    for (y, eta) in per_node {
        for j in 0..m {
            for o in 0..3 {
                constants.y[j][o] = constants.y[j][o].max(y[j][o]);
                constants.eta[j][o] = constants.eta[j][o].max(eta[j][o]);
            }
        }
    }

    // (d) the product is again regular
    let phi = PhaseFunction::from_arc(Arc::new(mp.clone()));
    let certificate = certify_regular(&phi, g, 0)?;
    let tau0 = chain.tau0();
    let k = if tau0 > 0.0 { certificate.tau / tau0 } else if certificate.tau == 0.0 { 1.0 } else { f64::INFINITY };
    let bounds = mp.bound_ratios();
    let max_contraction = mp.max_contraction();
    let contraction_bound = 3.0 * tau0 + 0.05;
    Ok(StructureReport {
        deriv_x,
        deriv_xi,
        associativity,
        constants,
        bounds,
        bounds_hold: bounds.increments <= 1.0 && bounds.partial_sums <= 1.0,
        max_contraction,
        contraction_bound,
        contraction_ok: max_contraction <= contraction_bound,
        tau0,
        certificate,
        k,
        k_tau0_below_one: k * tau0 < 1.0,
        nodes: nodes.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetBound {
    pub det: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

/// `(1 - c0)^l <= det(I - A) <= (1 + c0)^l` for `A` with column-sum norm
/// at most `c0 < 1`.
pub fn det_bound_check(a: &DMatrix<f64>, c0: f64) -> Result<DetBound, MultiError> {
    if !a.is_square() {
        return Err(MultiError::Precondition(format!("matrix is {}x{}, not square", a.nrows(), a.ncols())));
    }
    if !(0.0..1.0).contains(&c0) {
        return Err(MultiError::Precondition(format!("need 0 <= c0 < 1, got {c0}")));
    }
    let norm = (0..a.ncols()).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    if norm > c0 {
        return Err(MultiError::Precondition(format!("column-sum norm {norm} exceeds c0 = {c0}")));
    }
    let l = a.nrows() as i32;
    let det = (DMatrix::identity(a.nrows(), a.ncols()) - a).lu().determinant();
    let (lo, hi) = ((1.0 - c0).powi(l), (1.0 + c0).powi(l));
    Ok(DetBound { det, lo, hi, pass: det >= lo && det <= hi })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id() -> PhaseFunction {
        PhaseFunction::identity()
    }

    #[test]
    fn admissibility_is_enforced() {
        let p = PhaseFunction::translation(0.1);
        assert!(matches!(PhaseChain::new(vec![p.clone(), p.clone()], vec![0.15, 0.15]), Err(MultiError::Inadmissible { .. })));
        assert!(matches!(PhaseChain::new(vec![p.clone()], vec![0.1]), Err(MultiError::TooShort(1))));
        assert!(matches!(PhaseChain::from_certified(vec![p.clone(), p]), Err(MultiError::Uncertified { index: 0 })));
    }

    #[test]
    fn all_identity_needs_no_iterations() {
        let chain = PhaseChain::new(vec![id(), id(), id()], vec![0.0; 3]).unwrap();
        let c = solve_critical(&chain, 1.3, -0.4, 1e-12, 10).unwrap();
        assert_eq!(c.iterations, 0);
        assert_eq!(c.dy, vec![0.0, 0.0]);
        assert_eq!(c.deta, vec![0.0, 0.0]);
        assert_eq!(c.value, 1.3 * -0.4);
    }

    #[test]
    fn leading_identity_decouples() {
        let phi = PhaseFunction::parse("x*xi + 0.05*sin(x)*ang(xi)").unwrap();
        let chain = PhaseChain::new(vec![id(), phi.clone()], vec![0.0, 0.1]).unwrap();
        let (x, xi) = (0.7, 1.9);
        let c = solve_critical(&chain, x, xi, 1e-12, 10).unwrap();
        assert_eq!(c.iterations, 1);
        assert_eq!(c.y[0], x);
        assert_eq!(c.n[0], phi.grad(x, xi).unwrap().0);
        assert!((c.value - phi.value(x, xi).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn translations_compose() {
        let chain = PhaseChain::new(vec![PhaseFunction::translation(0.05), PhaseFunction::translation(0.07)], vec![0.05, 0.07]).unwrap();
        let c = solve_critical(&chain, 0.3, 2.0, 1e-12, 20).unwrap();
        assert!((c.value - (0.3 + 0.12) * 2.0).abs() < 1e-13);
        assert!(c.residual <= 1e-12);
    }

    #[test]
    fn reconstruction_is_exact() {
        let a = PhaseFunction::parse("x*xi + 0.03*sin(x)*ang(xi)").unwrap();
        let b = PhaseFunction::parse("x*xi + 0.02*ang(x)*cos(xi)").unwrap();
        let chain = PhaseChain::new(vec![a.clone(), b, a], vec![0.05, 0.05, 0.05]).unwrap();
        let c = solve_critical(&chain, -1.1, 2.4, 1e-12, 50).unwrap();
        for j in 0..2 {
            assert_eq!(c.y[j], -1.1 + c.z[j]);
            assert_eq!(c.n[j], 2.4 + c.zeta[j]);
        }
        let b = c.bound_ratios(&chain);
        assert!(b.increments <= 1.0 && b.partial_sums <= 1.0);
    }

    #[test]
    fn det_bound_examples() {
        let z = DMatrix::<f64>::zeros(3, 3);
        let r = det_bound_check(&z, 0.0).unwrap();
        assert_eq!((r.det, r.lo, r.hi, r.pass), (1.0, 1.0, 1.0, true));
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.2, -0.2]));
        let r = det_bound_check(&d, 0.2).unwrap();
        assert!((r.det - 0.96).abs() < 1e-15);
        assert!((r.lo - 0.64).abs() < 1e-15 && (r.hi - 1.44).abs() < 1e-15);
        assert!(r.pass);
        assert!(det_bound_check(&d, 0.1).is_err());
    }
}
