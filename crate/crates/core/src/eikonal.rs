//! Eikonal phases `d_t phi = a(t, x, phi'_x)`, `phi(s, s) = x*xi`, by
//! Hamiltonian characteristics and shooting.
//!
//! Characteristics run backwards in the sense `dq/dθ = -a'_xi`,
//! `dp/dθ = a'_x` from `q(s) = y`, `p(s) = xi`. The action
//! `y*xi + ∫ (a - p a'_xi) dθ` gives the phase, `p(t)` gives `phi'_x` and the
//! matched initial point `y` gives `phi'_xi`. Second derivatives come from the
//! variational equations integrated alongside.

use crate::par;
use crate::phase::{fd_derivative, PhaseError, PhaseSource};
use crate::symbols::{ang, SampleGrid, SgSymbol, SymbolError};
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EikonalError {
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error("shooting did not converge at (x, xi) = ({x}, {xi}) after {iterations} iterations, residual {residual:e}")]
    Shooting { x: f64, xi: f64, iterations: usize, residual: f64 },
    #[error("characteristics cross (dq/dy = {qy}) at y = {y}, xi = {xi}; the time step t-s is too large")]
    Caustic { y: f64, xi: f64, qy: f64 },
    #[error("need s <= t, got s = {s}, t = {t}")]
    TimeOrder { s: f64, t: f64 },
    #[error("insufficient s-samples: stencil [{lo}, {hi}] leaves [0, t]")]
    InsufficientSamples { lo: f64, hi: f64 },
    #[error("sweep could not cover the target interval at xi = {xi}")]
    Coverage { xi: f64 },
}

impl From<EikonalError> for PhaseError {
    fn from(e: EikonalError) -> PhaseError {
        match e {
            EikonalError::Symbol(s) => PhaseError::Symbol(s),
            EikonalError::Shooting { x, xi, iterations, residual } => PhaseError::NoConvergence {
                what: "eikonal shooting",
                x,
                xi,
                detail: format!("{iterations} iterations, residual {residual:e}"),
            },
            other => PhaseError::Invalid(other.to_string()),
        }
    }
}

/// State along one characteristic together with the two variational
/// columns `d(q,p)/dy` and `d(q,p)/dxi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowState {
    pub q: f64,
    pub p: f64,
    pub action: f64,
    pub qy: f64,
    pub py: f64,
    pub qxi: f64,
    pub pxi: f64,
}

impl FlowState {
    pub fn initial(y: f64, xi: f64) -> FlowState {
        FlowState { q: y, p: xi, action: y * xi, qy: 1.0, py: 0.0, qxi: 0.0, pxi: 1.0 }
    }

    fn to_array(self) -> [f64; 7] {
        [self.q, self.p, self.action, self.qy, self.py, self.qxi, self.pxi]
    }

    fn from_array(v: [f64; 7]) -> FlowState {
        FlowState { q: v[0], p: v[1], action: v[2], qy: v[3], py: v[4], qxi: v[5], pxi: v[6] }
    }
}

fn rhs(a: &SgSymbol, theta: f64, s: f64, st: &[f64; 7]) -> Result<[f64; 7], SymbolError> {
    let (q, p) = (st[0], st[1]);
    let a0 = a.dxx(0, 0, theta, s, q, p)?;
    let ax = a.dxx(1, 0, theta, s, q, p)?;
    let axi = a.dxx(0, 1, theta, s, q, p)?;
    let axx = a.dxx(2, 0, theta, s, q, p)?;
    let axxi = a.dxx(1, 1, theta, s, q, p)?;
    let axixi = a.dxx(0, 2, theta, s, q, p)?;
    Ok([
        -axi,
        ax,
        a0 - p * axi,
        -(axxi * st[3] + axixi * st[4]),
        axx * st[3] + axxi * st[4],
        -(axxi * st[5] + axixi * st[6]),
        axx * st[5] + axxi * st[6],
    ])
}

fn rk4_step(a: &SgSymbol, theta: f64, s: f64, h: f64, y: &[f64; 7]) -> Result<[f64; 7], SymbolError> {
    let add = |u: &[f64; 7], k: &[f64; 7], c: f64| {
        let mut o = *u;
        for i in 0..7 {
            o[i] += c * k[i];
        }
        o
    };
    let k1 = rhs(a, theta, s, y)?;
    let k2 = rhs(a, theta + 0.5 * h, s, &add(y, &k1, 0.5 * h))?;
    let k3 = rhs(a, theta + 0.5 * h, s, &add(y, &k2, 0.5 * h))?;
    let k4 = rhs(a, theta + h, s, &add(y, &k3, h))?;
    let mut o = *y;
    for i in 0..7 {
        o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(o)
}

/// Number of fixed RK4 steps used to cover `[from, to]` with nominal step `h`.
pub fn step_count(from: f64, to: f64, h: f64) -> usize {
    (((to - from) / h) - 1e-9).ceil().max(1.0) as usize
}

/// Characteristic through `(y, xi)` at time `s`, integrated to `t`.
#[derive(Debug, Clone)]
pub struct CharacteristicFlow {
    pub s: f64,
    pub t: f64,
    pub y: f64,
    pub xi: f64,
    pub h: f64,
    /// `(θ, state)` at every RK4 node, starting with `θ = s`.
    pub path: Vec<(f64, FlowState)>,
}

impl CharacteristicFlow {
    pub fn compute(a: &SgSymbol, s: f64, t: f64, y: f64, xi: f64, h: f64) -> Result<CharacteristicFlow, EikonalError> {
        if t < s {
            return Err(EikonalError::TimeOrder { s, t });
        }
        let mut path = vec![(s, FlowState::initial(y, xi))];
        if t > s {
            let n = step_count(s, t, h);
            let he = (t - s) / n as f64;
            let mut st = FlowState::initial(y, xi).to_array();
            for k in 0..n {
                let theta = s + k as f64 * he;
                st = rk4_step(a, theta, s, he, &st)?;
                path.push((s + (k + 1) as f64 * he, FlowState::from_array(st)));
            }
        }
        Ok(CharacteristicFlow { s, t, y, xi, h, path })
    }

    pub fn end(&self) -> FlowState {
        self.path.last().unwrap().1
    }
}

/// Integrate one characteristic from `s` to `t` and return the end state.
pub fn integrate(a: &SgSymbol, s: f64, t: f64, y: f64, xi: f64, h: f64) -> Result<FlowState, EikonalError> {
    if t < s {
        return Err(EikonalError::TimeOrder { s, t });
    }
    if t == s {
        return Ok(FlowState::initial(y, xi));
    }
    let n = step_count(s, t, h);
    let he = (t - s) / n as f64;
    let mut st = FlowState::initial(y, xi).to_array();
    for k in 0..n {
        st = rk4_step(a, s + k as f64 * he, s, he, &st)?;
    }
    Ok(FlowState::from_array(st))
}

/// Integrate and record the state at each of the ascending `times` (all `>= s`).
fn integrate_through(a: &SgSymbol, s: f64, times: &[f64], y: f64, xi: f64, h: f64, out: &mut Vec<FlowState>) -> Result<(), EikonalError> {
    let mut st = FlowState::initial(y, xi).to_array();
    let mut now = s;
    for &t in times {
        if t > now {
            let n = step_count(now, t, h);
            let he = (t - now) / n as f64;
            for k in 0..n {
                st = rk4_step(a, now + k as f64 * he, s, he, &st)?;
            }
            now = t;
        }
        out.push(FlowState::from_array(st));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShootOptions {
    /// Nominal RK4 step.
    pub h: f64,
    /// Matching tolerance for `|q(t) - x|`, scaled by `max(1, |x|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions { h: 1e-3, tol: 1e-12, max_iter: 50 }
    }
}

/// Phase data at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeSolution {
    pub y: f64,
    pub phi: f64,
    pub phix: f64,
    pub phixi: f64,
    pub phixx: f64,
    pub phixxi: f64,
    pub phixixi: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl NodeSolution {
    fn identity(x: f64, xi: f64) -> NodeSolution {
        NodeSolution { y: x, phi: x * xi, phix: xi, phixi: x, phixx: 0.0, phixxi: 1.0, phixixi: 0.0, residual: 0.0, iterations: 0 }
    }

    fn from_state(y: f64, st: &FlowState, residual: f64, iterations: usize) -> NodeSolution {
        NodeSolution {
            y,
            phi: st.action,
            phix: st.p,
            phixi: y,
            phixx: st.py / st.qy,
            phixxi: 1.0 / st.qy,
            phixixi: -st.qxi / st.qy,
            residual,
            iterations,
        }
    }
}

/// Damped Newton shooting for the initial point `y` whose characteristic
/// reaches `x` at time `t`.
pub fn shoot(a: &SgSymbol, t: f64, s: f64, x: f64, xi: f64, guess: Option<f64>, opts: &ShootOptions) -> Result<NodeSolution, EikonalError> {
    if t < s {
        return Err(EikonalError::TimeOrder { s, t });
    }
    if t == s {
        return Ok(NodeSolution::identity(x, xi));
    }
    let scale = x.abs().max(1.0);
    let target = opts.tol * scale;
    let mut y = match guess {
        Some(g) => g,
        None => x + (t - s) * a.dxx(0, 1, s, s, x, xi)?,
    };
    let mut st = integrate(a, s, t, y, xi, opts.h)?;
    let mut f = st.q - x;
    let mut iterations = 0;
    while f.abs() > target {
        if iterations >= opts.max_iter {
            return Err(EikonalError::Shooting { x, xi, iterations, residual: f.abs() });
        }
        iterations += 1;
        if !(st.qy > 0.0) {
            return Err(EikonalError::Caustic { y, xi, qy: st.qy });
        }
        let step = -f / st.qy;
        let mut lambda = 1.0;
        loop {
            let yn = y + lambda * step;
            let sn = integrate(a, s, t, yn, xi, opts.h)?;
            let fnew = sn.q - x;
            if fnew.abs() < f.abs() || lambda < 1e-6 {
                y = yn;
                st = sn;
                f = fnew;
                break;
            }
            lambda *= 0.5;
        }
        // roundoff floor: the Newton step no longer moves y
        if (lambda * step).abs() <= 4.0 * f64::EPSILON * y.abs().max(1.0) && f.abs() <= 100.0 * target {
            break;
        }
    }
    Ok(NodeSolution::from_state(y, &st, f.abs(), iterations))
}

/// How an eikonal phase answers queries between its grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OffGrid {
    /// Shoot at the query point, seeded by cubic interpolation.
    Shoot,
    /// Separable cubic interpolation of the stored grids (falls back to
    /// shooting outside the grid).
    Cubic,
}

/// Solved phase `phi(t, s, x, xi)` on a tensor grid.
#[derive(Debug, Clone)]
pub struct EikonalPhase {
    a: Arc<SgSymbol>,
    pub t: f64,
    pub s: f64,
    pub opts: ShootOptions,
    xs: Vec<f64>,
    xis: Vec<f64>,
    /// Row-major `[i * nxi + j]` grids.
    phi: Vec<f64>,
    phix: Vec<f64>,
    phixi: Vec<f64>,
    phixx: Vec<f64>,
    phixxi: Vec<f64>,
    phixixi: Vec<f64>,
    pub max_residual: f64,
    pub offgrid: OffGrid,
    pub fd_step: f64,
}

/// Solve on the nodes of a sample grid.
pub fn solve_eikonal(a: &Arc<SgSymbol>, t: f64, s: f64, g: &SampleGrid, h: f64, tol: f64) -> Result<EikonalPhase, EikonalError> {
    let opts = ShootOptions { h, tol, ..Default::default() };
    EikonalPhase::solve(a, t, s, &g.xs(), &g.xis(), &opts)
}

impl EikonalPhase {
    /// Shoot at every node of the tensor grid `xs x xis`.
    pub fn solve(a: &Arc<SgSymbol>, t: f64, s: f64, xs: &[f64], xis: &[f64], opts: &ShootOptions) -> Result<EikonalPhase, EikonalError> {
        if t < s {
            return Err(EikonalError::TimeOrder { s, t });
        }
        let nxi = xis.len();
        // march along x for each xi so each node seeds its neighbour
        let cols = par::try_map(nxi, |j| {
            let xi = xis[j];
            let mut col = Vec::with_capacity(xs.len());
            let mut prev: Option<(f64, f64)> = None;
            for &x in xs {
                let guess = prev.map(|(px, py)| py + (x - px));
                let sol = match shoot(a, t, s, x, xi, guess, opts) {
                    Ok(v) => v,
                    Err(_) if guess.is_some() => shoot(a, t, s, x, xi, None, opts)?,
                    Err(e) => return Err(e),
                };
                prev = Some((x, sol.y));
                col.push(sol);
            }
            Ok(col)
        })?;
        let mut out = EikonalPhase::empty(a, t, s, xs, xis, opts);
        for (j, col) in cols.into_iter().enumerate() {
            for (i, sol) in col.into_iter().enumerate() {
                out.store(i * nxi + j, &sol);
            }
        }
        Ok(out)
    }

    fn empty(a: &Arc<SgSymbol>, t: f64, s: f64, xs: &[f64], xis: &[f64], opts: &ShootOptions) -> EikonalPhase {
        let n = xs.len() * xis.len();
        EikonalPhase {
            a: Arc::clone(a),
            t,
            s,
            opts: *opts,
            xs: xs.to_vec(),
            xis: xis.to_vec(),
            phi: vec![0.0; n],
            phix: vec![0.0; n],
            phixi: vec![0.0; n],
            phixx: vec![0.0; n],
            phixxi: vec![0.0; n],
            phixixi: vec![0.0; n],
            max_residual: 0.0,
            offgrid: OffGrid::Shoot,
            fd_step: 1e-3,
        }
    }

    fn store(&mut self, k: usize, sol: &NodeSolution) {
        self.phi[k] = sol.phi;
        self.phix[k] = sol.phix;
        self.phixi[k] = sol.phixi;
        self.phixx[k] = sol.phixx;
        self.phixxi[k] = sol.phixxi;
        self.phixixi[k] = sol.phixixi;
        self.max_residual = self.max_residual.max(sol.residual);
    }

    pub fn with_offgrid(mut self, mode: OffGrid) -> EikonalPhase {
        self.offgrid = mode;
        self
    }

    pub fn symbol(&self) -> &Arc<SgSymbol> {
        &self.a
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn xis(&self) -> &[f64] {
        &self.xis
    }

    /// Stored `(phi, phi'_x, phi'_xi)` at node `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> (f64, f64, f64) {
        let k = i * self.xis.len() + j;
        (self.phi[k], self.phix[k], self.phixi[k])
    }

    pub fn phi_grid(&self) -> &[f64] {
        &self.phi
    }

    pub fn phix_grid(&self) -> &[f64] {
        &self.phix
    }

    pub fn phixi_grid(&self) -> &[f64] {
        &self.phixi
    }

    fn node_index(&self, x: f64, xi: f64) -> Option<usize> {
        let i = self.xs.binary_search_by(|v| v.total_cmp(&x)).ok()?;
        let j = self.xis.binary_search_by(|v| v.total_cmp(&xi)).ok()?;
        Some(i * self.xis.len() + j)
    }

    /// Separable cubic interpolation of a stored grid; `None` outside.
    fn interp(&self, grid: &[f64], x: f64, xi: f64) -> Option<f64> {
        let (i0, wx) = cubic_weights(&self.xs, x)?;
        let (j0, wxi) = cubic_weights(&self.xis, xi)?;
        let nxi = self.xis.len();
        let mut acc = 0.0;
        for (a, wa) in wx.iter().enumerate() {
            let row = (i0 + a) * nxi + j0;
            let mut r = 0.0;
            for (b, wb) in wxi.iter().enumerate() {
                r += wb * grid[row + b];
            }
            acc += wa * r;
        }
        Some(acc)
    }

    /// Pointwise solve at an arbitrary point.
    pub fn solve_point(&self, x: f64, xi: f64) -> Result<NodeSolution, EikonalError> {
        let guess = self.interp(&self.phixi, x, xi);
        match shoot(&self.a, self.t, self.s, x, xi, guess, &self.opts) {
            Ok(v) => Ok(v),
            Err(_) if guess.is_some() => shoot(&self.a, self.t, self.s, x, xi, None, &self.opts),
            Err(e) => Err(e),
        }
    }

    fn second_order(&self, nx: usize, nxi: usize, x: f64, xi: f64) -> Result<f64, PhaseError> {
        let pick = |g: &EikonalPhase, sol: Option<&NodeSolution>, k: Option<usize>| -> f64 {
            match (nx, nxi, sol, k) {
                (0, 0, Some(s), _) => s.phi,
                (1, 0, Some(s), _) => s.phix,
                (0, 1, Some(s), _) => s.phixi,
                (2, 0, Some(s), _) => s.phixx,
                (1, 1, Some(s), _) => s.phixxi,
                (0, 2, Some(s), _) => s.phixixi,
                (0, 0, None, Some(k)) => g.phi[k],
                (1, 0, None, Some(k)) => g.phix[k],
                (0, 1, None, Some(k)) => g.phixi[k],
                (2, 0, None, Some(k)) => g.phixx[k],
                (1, 1, None, Some(k)) => g.phixxi[k],
                (0, 2, None, Some(k)) => g.phixixi[k],
                _ => unreachable!(),
            }
        };
        if let Some(k) = self.node_index(x, xi) {
            return Ok(pick(self, None, Some(k)));
        }
        if self.t == self.s {
            return Ok(crate::phase::xxi_derivative(nx, nxi, x, xi));
        }
        if self.offgrid == OffGrid::Cubic {
            let grid = match (nx, nxi) {
                (0, 0) => &self.phi,
                (1, 0) => &self.phix,
                (0, 1) => &self.phixi,
                (2, 0) => &self.phixx,
                (1, 1) => &self.phixxi,
                _ => &self.phixixi,
            };
            if let Some(v) = self.interp(grid, x, xi) {
                return Ok(v);
            }
        }
        let sol = self.solve_point(x, xi)?;
        Ok(pick(self, Some(&sol), None))
    }

    /// `sup |d_t phi - a(t, x, phi'_x)|` over interior nodes, with `d_t phi`
    /// from a central difference in `t` of pointwise solves.
    pub fn verify_forward(&self, dt: f64) -> Result<f64, EikonalError> {
        if self.t - dt < self.s {
            return Err(EikonalError::InsufficientSamples { lo: self.t - dt, hi: self.t + dt });
        }
        let (nx, nxi) = (self.xs.len(), self.xis.len());
        let rows = par::try_map(nx.saturating_sub(2), |ii| {
            let i = ii + 1;
            let x = self.xs[i];
            let mut worst = 0.0f64;
            for j in 1..nxi - 1 {
                let xi = self.xis[j];
                let k = i * nxi + j;
                let guess = Some(self.phixi[k]);
                let up = shoot(&self.a, self.t + dt, self.s, x, xi, guess, &self.opts)?;
                let dn = shoot(&self.a, self.t - dt, self.s, x, xi, guess, &self.opts)?;
                let dphi = (up.phi - dn.phi) / (2.0 * dt);
                let a = self.a.dxx(0, 0, self.t, self.s, x, self.phix[k])?;
                worst = worst.max((dphi - a).abs());
            }
            Ok::<_, EikonalError>(worst)
        })?;
        Ok(rows.into_iter().fold(0.0, f64::max))
    }

    /// `sup |d_s phi + a(s, phi'_xi, xi)|` over interior nodes, with `d_s phi`
    /// from a central difference in `s`.
    pub fn verify_backward(&self, ds: f64) -> Result<f64, EikonalError> {
        let (lo, hi) = (self.s - ds, self.s + ds);
        if lo < 0.0 || hi > self.t {
            return Err(EikonalError::InsufficientSamples { lo, hi });
        }
        let (nx, nxi) = (self.xs.len(), self.xis.len());
        let rows = par::try_map(nx.saturating_sub(2), |ii| {
            let i = ii + 1;
            let x = self.xs[i];
            let mut worst = 0.0f64;
            for j in 1..nxi - 1 {
                let xi = self.xis[j];
                let k = i * nxi + j;
                let guess = Some(self.phixi[k]);
                let up = shoot(&self.a, self.t, hi, x, xi, guess, &self.opts)?;
                let dn = shoot(&self.a, self.t, lo, x, xi, guess, &self.opts)?;
                let dphi = (up.phi - dn.phi) / (2.0 * ds);
                let a = self.a.dxx(0, 0, self.s, self.s, self.phixi[k], xi)?;
                worst = worst.max((dphi + a).abs());
            }
            Ok::<_, EikonalError>(worst)
        })?;
        Ok(rows.into_iter().fold(0.0, f64::max))
    }
}

/// Start index and weights of the 4-point Lagrange stencil on a uniform
/// ascending grid; `None` outside `[grid[0], grid[n-1]]`.
fn cubic_weights(grid: &[f64], v: f64) -> Option<(usize, [f64; 4])> {
    let n = grid.len();
    if n < 4 || !(v >= grid[0] && v <= grid[n - 1]) {
        return None;
    }
    let d = (grid[n - 1] - grid[0]) / (n - 1) as f64;
    let pos = (v - grid[0]) / d;
    let cell = (pos.floor() as usize).min(n - 2);
    let start = cell.saturating_sub(1).min(n - 4);
    let u = pos - start as f64;
    let nodes = [0.0, 1.0, 2.0, 3.0];
    let mut w = [0.0; 4];
    for a in 0..4 {
        let mut p = 1.0;
        for b in 0..4 {
            if a != b {
                p *= (u - nodes[b]) / (nodes[a] - nodes[b]);
            }
        }
        w[a] = p;
    }
    Some((start, w))
}

impl PhaseSource for EikonalPhase {
    fn value(&self, x: f64, xi: f64) -> Result<f64, PhaseError> {
        self.second_order(0, 0, x, xi)
    }

    fn grad(&self, x: f64, xi: f64) -> Result<(f64, f64), PhaseError> {
        if let Some(k) = self.node_index(x, xi) {
            return Ok((self.phix[k], self.phixi[k]));
        }
        if self.t == self.s {
            return Ok((xi, x));
        }
        if self.offgrid == OffGrid::Cubic {
            if let (Some(a), Some(b)) = (self.interp(&self.phix, x, xi), self.interp(&self.phixi, x, xi)) {
                return Ok((a, b));
            }
        }
        let sol = self.solve_point(x, xi)?;
        Ok((sol.phix, sol.phixi))
    }

    fn value_grad(&self, x: f64, xi: f64) -> Result<(f64, f64, f64), PhaseError> {
        if let Some(k) = self.node_index(x, xi) {
            return Ok((self.phi[k], self.phix[k], self.phixi[k]));
        }
        if self.t == self.s {
            return Ok((x * xi, xi, x));
        }
        if self.offgrid == OffGrid::Cubic {
            if let (Some(v), Some(a), Some(b)) = (self.interp(&self.phi, x, xi), self.interp(&self.phix, x, xi), self.interp(&self.phixi, x, xi)) {
                return Ok((v, a, b));
            }
        }
        let sol = self.solve_point(x, xi)?;
        Ok((sol.phi, sol.phix, sol.phixi))
    }

    fn derivative(&self, nx: usize, nxi: usize, x: f64, xi: f64) -> Result<f64, PhaseError> {
        if nx + nxi <= 2 {
            return self.second_order(nx, nxi, x, xi);
        }
        let step = self.fd_step;
        fd_derivative(|a, b, px, pxi| self.second_order(a, b, px, pxi), 2, nx, nxi, x, xi, step)
    }

    fn max_order(&self) -> usize {
        4
    }

    fn describe(&self) -> String {
        format!("eikonal[{}; t={}, s={}]", self.a.source(), self.t, self.s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepOptions {
    /// Nominal RK4 step.
    pub h: f64,
    /// Initial points per target-grid spacing.
    pub refine: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { h: 1e-3, refine: 2 }
    }
}

fn hermite(u: f64, f0: f64, f1: f64, d0: f64, d1: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    (2.0 * u3 - 3.0 * u2 + 1.0) * f0 + (u3 - 2.0 * u2 + u) * d0 + (-2.0 * u3 + 3.0 * u2) * f1 + (u3 - u2) * d1
}

fn hermite_slope(u: f64, f0: f64, f1: f64, d0: f64, d1: f64) -> f64 {
    let u2 = u * u;
    (6.0 * u2 - 6.0 * u) * f0 + (3.0 * u2 - 4.0 * u + 1.0) * d0 + (-6.0 * u2 + 6.0 * u) * f1 + (3.0 * u2 - 2.0 * u) * d1
}

/// Phases `phi(t_k, s)` for all `times` at once: characteristics are launched
/// from a fine grid of initial points for each `xi` node, and the map
/// `y -> q(t)` is inverted by Hermite interpolation instead of shooting.
pub fn solve_eikonal_family(a: &Arc<SgSymbol>, s: f64, times: &[f64], xs: &[f64], xis: &[f64], opts: &SweepOptions) -> Result<Vec<EikonalPhase>, EikonalError> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&p, &q| times[p].total_cmp(&times[q]));
    let sorted: Vec<f64> = order.iter().map(|&k| times[k]).collect();
    if let Some(&t0) = sorted.first() {
        if t0 < s {
            return Err(EikonalError::TimeOrder { s, t: t0 });
        }
    }
    let nt = sorted.len();
    let (nx, nxi) = (xs.len(), xis.len());
    let (xmin, xmax) = (xs[0], xs[nx - 1]);
    let dx = (xmax - xmin) / (nx - 1).max(1) as f64;
    let dy = dx / opts.refine.max(1) as f64;
    let tmax = sorted.last().copied().unwrap_or(s);

    // per xi: node solutions at every (time, x)
    let cols = par::try_map(nxi, |j| {
        let xi = xis[j];
        let speed = a.dxx(0, 1, s, s, xmin, xi)?.abs().max(a.dxx(0, 1, s, s, xmax, xi)?.abs());
        let mut margin = 1.5 * (tmax - s) * speed + 4.0 * dx;
        for _attempt in 0..8 {
            let ny = ((xmax - xmin + 2.0 * margin) / dy).ceil() as usize + 1;
            let y0 = xmin - margin;
            let mut states: Vec<Vec<FlowState>> = Vec::with_capacity(ny);
            for k in 0..ny {
                let mut path = Vec::with_capacity(nt);
                integrate_through(a, s, &sorted, y0 + k as f64 * dy, xi, opts.h, &mut path)?;
                states.push(path);
            }
            let covered = (0..nt).all(|ti| states[0][ti].q <= xmin && states[ny - 1][ti].q >= xmax);
            if !covered {
                margin *= 2.0;
                continue;
            }
            let mut out = vec![NodeSolution::identity(0.0, 0.0); nt * nx];
            for ti in 0..nt {
                if sorted[ti] == s {
                    for (i, &x) in xs.iter().enumerate() {
                        out[ti * nx + i] = NodeSolution::identity(x, xi);
                    }
                    continue;
                }
                for (k, path) in states.iter().enumerate() {
                    if !(path[ti].qy > 0.0) {
                        return Err(EikonalError::Caustic { y: y0 + k as f64 * dy, xi, qy: path[ti].qy });
                    }
                }
                let mut cell = 0usize;
                for (i, &x) in xs.iter().enumerate() {
                    while cell + 2 < ny && states[cell + 1][ti].q < x {
                        cell += 1;
                    }
                    let (a0, a1) = (&states[cell][ti], &states[cell + 1][ti]);
                    let (d0, d1) = (a0.qy * dy, a1.qy * dy);
                    // solve hermite(u) = x on [0, 1]
                    let mut u = ((x - a0.q) / (a1.q - a0.q)).clamp(0.0, 1.0);
                    for _ in 0..30 {
                        let f = hermite(u, a0.q, a1.q, d0, d1) - x;
                        let df = hermite_slope(u, a0.q, a1.q, d0, d1);
                        let du = f / df;
                        u = (u - du).clamp(0.0, 1.0);
                        if du.abs() < 1e-15 {
                            break;
                        }
                    }
                    let y = y0 + (cell as f64 + u) * dy;
                    let phi = hermite(u, a0.action, a1.action, a0.p * a0.qy * dy, a1.p * a1.qy * dy);
                    let p = hermite(u, a0.p, a1.p, a0.py * dy, a1.py * dy);
                    // four-point Lagrange for the variational columns
                    let start = cell.saturating_sub(1).min(ny - 4);
                    let uu = cell as f64 + u - start as f64;
                    let mut w = [0.0; 4];
                    for (m, wm) in w.iter_mut().enumerate() {
                        let mut prod = 1.0;
                        for n in 0..4 {
                            if n != m {
                                prod *= (uu - n as f64) / (m as f64 - n as f64);
                            }
                        }
                        *wm = prod;
                    }
                    let lag = |f: &dyn Fn(&FlowState) -> f64| -> f64 { (0..4).map(|m| w[m] * f(&states[start + m][ti])).sum() };
                    let qy = lag(&|st| st.qy);
                    let py = lag(&|st| st.py);
                    let qxi = lag(&|st| st.qxi);
                    let residual = (hermite(u, a0.q, a1.q, d0, d1) - x).abs();
                    out[ti * nx + i] = NodeSolution {
                        y,
                        phi,
                        phix: p,
                        phixi: y,
                        phixx: py / qy,
                        phixxi: 1.0 / qy,
                        phixixi: -qxi / qy,
                        residual,
                        iterations: 0,
                    };
                }
            }
            return Ok(out);
        }
        Err(EikonalError::Coverage { xi })
    })?;

    let shoot_opts = ShootOptions { h: opts.h, ..Default::default() };
    let mut phases: Vec<EikonalPhase> = sorted.iter().map(|&t| EikonalPhase::empty(a, t, s, xs, xis, &shoot_opts)).collect();
    for (j, col) in cols.into_iter().enumerate() {
        for ti in 0..nt {
            for i in 0..nx {
                phases[ti].store(i * nxi + j, &col[ti * nx + i]);
            }
        }
    }
    // back to the caller's order
    let mut slots: Vec<Option<EikonalPhase>> = phases.into_iter().map(Some).collect();
    let mut result = Vec::with_capacity(nt);
    let mut inverse = vec![0usize; nt];
    for (pos, &k) in order.iter().enumerate() {
        inverse[k] = pos;
    }
    for k in 0..nt {
        result.push(slots[inverse[k]].take().expect("each phase used once"));
    }
    Ok(result)
}

/// Observed order of the RK4 integrator on one characteristic: errors of
/// `(q, p)` at steps `h, h/2, h/4` against a reference at `h/64`, and the
/// least-squares slope of `log2(error)` against `log2(h)`.
pub fn convergence_order(a: &SgSymbol, s: f64, t: f64, y: f64, xi: f64, h: f64) -> Result<(f64, [f64; 3]), EikonalError> {
    let reference = integrate(a, s, t, y, xi, h / 64.0)?;
    let mut errs = [0.0; 3];
    for (k, e) in errs.iter_mut().enumerate() {
        let st = integrate(a, s, t, y, xi, h / f64::powi(2.0, k as i32))?;
        *e = (st.q - reference.q).abs().max((st.p - reference.p).abs());
    }
    let xs = [0.0f64, -1.0, -2.0];
    let ys: Vec<f64> = errs.iter().map(|e| e.log2()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok((num / den, errs))
}

/// Weighted size of the matched displacement, used in reports.
pub fn displacement_ratio(p: &EikonalPhase) -> f64 {
    let nxi = p.xis.len();
    let mut worst = 0.0f64;
    for (i, &x) in p.xs.iter().enumerate() {
        for j in 0..nxi {
            worst = worst.max((p.phixi[i * nxi + j] - x).abs() / ang(x));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(text: &str) -> Arc<SgSymbol> {
        Arc::new(SgSymbol::parse(text, 0.0, 1.0).unwrap())
    }

    #[test]
    fn equal_times_are_bit_exact() {
        let a = sym("ang(xi)*(1 + 0.1*sin(x))");
        let g = SampleGrid::square(4.0, 9);
        let p = solve_eikonal(&a, 0.3, 0.3, &g, 1e-3, 1e-12).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let (phi, px, pxi) = p.node(i, j);
                assert_eq!(phi, g.x(i) * g.xi(j));
                assert_eq!(px, g.xi(j));
                assert_eq!(pxi, g.x(i));
            }
        }
    }

    #[test]
    fn x_independent_symbol_conserves_momentum() {
        let a = sym("ang(xi)");
        let flow = CharacteristicFlow::compute(&a, 0.0, 0.1, 0.3, 2.0, 1e-3).unwrap();
        for (_, st) in &flow.path {
            assert_eq!(st.p, 2.0);
        }
    }

    #[test]
    fn unit_speed_transport() {
        let a = sym("xi");
        let flow = CharacteristicFlow::compute(&a, 0.2, 0.3, 1.5, -0.7, 1e-3).unwrap();
        for (theta, st) in &flow.path {
            assert!((st.q - (1.5 - (theta - 0.2))).abs() < 1e-13);
        }
    }

    #[test]
    fn step_count_handles_rounding() {
        assert_eq!(step_count(0.0, 0.1, 1e-3), 100);
        assert_eq!(step_count(0.0, 0.05, 0.02), 3);
        assert_eq!(step_count(0.0, 1e-9, 1e-3), 1);
    }

    #[test]
    fn shoot_rejects_reversed_times() {
        let a = sym("xi");
        assert!(matches!(shoot(&a, 0.0, 0.1, 0.0, 0.0, None, &ShootOptions::default()), Err(EikonalError::TimeOrder { .. })));
    }

    #[test]
    fn shooting_fails_loudly_past_caustic() {
        // characteristics focus well before t = 3; this must not silently succeed
        let a = Arc::new(SgSymbol::parse("sin(3*x)*xi^2", 0.0, 2.0).unwrap());
        let opts = ShootOptions { max_iter: 5, ..Default::default() };
        let r = shoot(&a, 3.0, 0.0, 0.4, 3.0, None, &opts);
        assert!(r.is_err());
    }

    #[test]
    fn cubic_weights_reproduce_cubics() {
        let grid: Vec<f64> = (0..10).map(|k| -1.0 + 0.25 * k as f64).collect();
        let f = |v: f64| 1.0 - 2.0 * v + 0.5 * v * v * v;
        for &v in &[-1.0, -0.9, 0.13, 1.2, 1.25] {
            let (st, w) = cubic_weights(&grid, v).unwrap();
            let approx: f64 = (0..4).map(|m| w[m] * f(grid[st + m])).sum();
            assert!((approx - f(v)).abs() < 1e-12);
        }
        assert!(cubic_weights(&grid, 1.3).is_none());
    }

    #[test]
    fn sweep_matches_shooting() {
        let a = sym("ang(xi)*(1 + 0.1*sin(x))");
        let xs: Vec<f64> = (0..41).map(|k| -5.0 + 0.25 * k as f64).collect();
        let xis: Vec<f64> = (0..9).map(|k| -4.0 + 1.0 * k as f64).collect();
        let fam = solve_eikonal_family(&a, 0.0, &[0.05, 0.0, 0.025], &xs, &xis, &SweepOptions { h: 1e-3, refine: 4 }).unwrap();
        assert_eq!(fam[0].t, 0.05);
        assert_eq!(fam[1].t, 0.0);
        let direct = EikonalPhase::solve(&a, 0.05, 0.0, &xs, &xis, &ShootOptions::default()).unwrap();
        let mut worst = 0.0f64;
        for i in 0..xs.len() {
            for j in 0..xis.len() {
                let (p1, x1, y1) = fam[0].node(i, j);
                let (p2, x2, y2) = direct.node(i, j);
                worst = worst.max((p1 - p2).abs()).max((x1 - x2).abs()).max((y1 - y2).abs());
            }
        }
        assert!(worst < 1e-7, "sweep vs shooting {worst:e}");
        let (phi, _, _) = fam[1].node(3, 4);
        assert_eq!(phi, xs[3] * xis[4]);
    }
    fn closed_form_error(text: &str, exact: impl Fn(f64, f64, f64) -> (f64, f64, f64)) -> f64 {
        let a = sym(text);
        let g = SampleGrid::square(4.0, 17);
        let (t, s) = (0.15, 0.05);
        let p = solve_eikonal(&a, t, s, &g, 1e-3, 1e-12).unwrap();
        let mut worst = 0.0f64;
        for i in 0..g.nx {
            for j in 0..g.nxi {
                let (phi, px, pxi) = p.node(i, j);
                let (e0, ex, exi) = exact(t - s, g.x(i), g.xi(j));
                worst = worst.max((phi - e0).abs()).max((px - ex).abs()).max((pxi - exi).abs());
            }
        }
        worst
    }

    #[test]
    fn closed_forms() {
        assert!(closed_form_error("xi", |d, x, xi| ((x + d) * xi, xi, x + d)) < 1e-6);
        assert!(closed_form_error("x*xi", |d, x, xi| (x * xi * d.exp(), xi * d.exp(), x * d.exp())) < 1e-6);
        assert!(closed_form_error("ang(xi)", |d, x, xi| (x * xi + d * ang(xi), xi, x + d * xi / ang(xi))) < 1e-6);
    }

    #[test]
    fn rk4_order() {
        let a = sym("ang(xi)*(1 + 0.3*sin(x))");
        let (slope, errs) = convergence_order(&a, 0.0, 1.0, 0.4, 1.5, 0.1).unwrap();
        assert!(slope >= 3.5, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn forward_and_backward_equations_hold() {
        let a = sym("ang(xi)*(1 + 0.1*sin(x))");
        let g = SampleGrid::square(3.0, 7);
        let p = solve_eikonal(&a, 0.08, 0.03, &g, 1e-3, 1e-12).unwrap();
        assert!(p.verify_backward(1e-3).unwrap() < 1e-4);
        assert!(p.verify_forward(1e-3).unwrap() < 1e-4);
        assert!(matches!(p.verify_backward(0.1), Err(EikonalError::InsufficientSamples { .. })));
    }

    #[test]
    fn off_grid_modes_agree() {
        let a = sym("ang(xi)*(1 + 0.1*sin(x))");
        let xs: Vec<f64> = (0..33).map(|k| -4.0 + 0.25 * k as f64).collect();
        let p = EikonalPhase::solve(&a, 0.05, 0.0, &xs, &xs, &ShootOptions::default()).unwrap();
        let v_shoot = p.value(0.13, -0.71).unwrap();
        let q = p.clone().with_offgrid(OffGrid::Cubic);
        let v_cubic = q.value(0.13, -0.71).unwrap();
        assert!((v_shoot - v_cubic).abs() < 1e-4);
        // outside the grid the cubic mode falls back to shooting
        assert_eq!(q.value(5.0, 0.0).unwrap(), p.value(5.0, 0.0).unwrap());
        let d3 = p.derivative(1, 2, 0.5, 0.5).unwrap();
        assert!(d3.is_finite());
    }
}
