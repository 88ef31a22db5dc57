//! Fundamental solution of first-order SG-hyperbolic systems
//! `D_t W + Lambda W + R W = F`, `D_t = -i d/dt`, with `Lambda` diagonal.
//!
//! `E(t, s)` is built as `I_phi(t, s) + int_s^t I_phi(t, th) sum_nu W_nu(th, s) dth`
//! where `I_phi` is block diagonal with eikonal phases for `a = -lambda_j`,
//! `i W_1 = L I_phi` and `W_{nu+1}(t, s) = int_s^t W_1(t, th) W_nu(th, s) dth`.
//! Everything lives on a uniform time grid `theta_k = k T0 / K`.

use crate::eikonal::{solve_eikonal_family, EikonalError, EikonalPhase, SweepOptions};
use crate::linalg::{self, CMat, CVec};
use crate::par;
use crate::quantize::{self, band_basis, kernel_matrix, pseudo_matrix_fn, BandBasis, BasisSpec, QuantError, QuantGrid};
use crate::symbols::{SgSymbol, SymbolError};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HypError {
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("eikonal phase for component {component} failed ({source}); T0 must shrink")]
    Eikonal { component: usize, source: EikonalError },
    #[error("invalid system: {0}")]
    Invalid(String),
    #[error("Picard series not decaying by order 3: norms {0:?}")]
    NotDecaying(Vec<f64>),
    #[error("reference solver unstable at t = {t}: norm grew from {from:e} to {to:e} in one step")]
    Unstable { t: f64, from: f64, to: f64 },
}

/// `L = D_t + diag(lambda_j) + R` on `[0, T0]`.
#[derive(Debug, Clone)]
pub struct HyperbolicSystem {
    lambdas: Vec<SgSymbol>,
    r: Vec<Vec<Option<SgSymbol>>>,
    eps: f64,
    t0: f64,
}

impl HyperbolicSystem {
    /// `lambdas[j]` of order `(m_j, 1)` with `m_j <= eps`; `r[j][k]` of order
    /// at most `(eps - 1, 0)`.
    pub fn new(lambdas: Vec<SgSymbol>, r: Vec<Vec<Option<SgSymbol>>>, eps: f64, t0: f64) -> Result<HyperbolicSystem, HypError> {
        let m = lambdas.len();
        if m == 0 {
            return Err(HypError::Invalid("system needs at least one component".into()));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(HypError::Invalid(format!("eps must lie in [0, 1], got {eps}")));
        }
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(HypError::Invalid(format!("T0 must be positive, got {t0}")));
        }
        if r.len() != m || r.iter().any(|row| row.len() != m) {
            return Err(HypError::Invalid(format!("R must be {m} x {m}")));
        }
        for (j, l) in lambdas.iter().enumerate() {
            let (mx, mxi) = l.order();
            if mxi != 1.0 || mx > eps {
                return Err(HypError::Invalid(format!("lambda_{} has order ({mx}, {mxi}); need (m, 1) with m <= eps = {eps}", j + 1)));
            }
            if l.depends_on_s() {
                return Err(HypError::Invalid(format!("lambda_{} may depend on t but not on s", j + 1)));
            }
        }
        for (j, row) in r.iter().enumerate() {
            for (k, e) in row.iter().enumerate() {
                if let Some(e) = e {
                    let (mx, mxi) = e.order();
                    if mx > eps - 1.0 || mxi > 0.0 {
                        return Err(HypError::Invalid(format!("R_{}{} has order ({mx}, {mxi}); need at most ({}, 0)", j + 1, k + 1, eps - 1.0)));
                    }
                    if e.depends_on_s() {
                        return Err(HypError::Invalid(format!("R_{}{} may depend on t but not on s", j + 1, k + 1)));
                    }
                }
            }
        }
        Ok(HyperbolicSystem { lambdas, r, eps, t0 })
    }

    pub fn scalar(lambda: SgSymbol, r: Option<SgSymbol>, eps: f64, t0: f64) -> Result<HyperbolicSystem, HypError> {
        HyperbolicSystem::new(vec![lambda], vec![vec![r]], eps, t0)
    }

    pub fn m(&self) -> usize {
        self.lambdas.len()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn lambdas(&self) -> &[SgSymbol] {
        &self.lambdas
    }

    pub fn coupling(&self) -> &[Vec<Option<SgSymbol>>] {
        &self.r
    }

    pub fn is_autonomous(&self) -> bool {
        self.lambdas.iter().all(|l| l.is_autonomous()) && self.r.iter().flatten().flatten().all(|e| e.is_autonomous())
    }

    /// Finite real `lambda_j` at every grid node and time.
    pub fn check_hyperbolic(&self, g: &QuantGrid, times: &[f64]) -> Result<(), HypError> {
        for (j, l) in self.lambdas.iter().enumerate() {
            for &t in times {
                for x in g.xs() {
                    for xi in g.xis() {
                        let v = l.eval(t, 0.0, x, xi)?;
                        if !v.is_finite() {
                            return Err(HypError::Invalid(format!("lambda_{} not finite at t = {t}, x = {x}, xi = {xi}", j + 1)));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Block matrix of `Lambda(t) + R(t)`.
    pub fn generator(&self, g: &QuantGrid, t: f64) -> Result<CMat, HypError> {
        let m = self.m();
        let n = g.n;
        let mut out = CMat::zeros(m * n, m * n);
        for j in 0..m {
            for k in 0..m {
                let mut block = if j == k { Some(symbol_matrix(g, &self.lambdas[j], t)?) } else { None };
                if let Some(r) = &self.r[j][k] {
                    let rm = symbol_matrix(g, r, t)?;
                    block = Some(match block {
                        Some(b) => b + rm,
                        None => rm,
                    });
                }
                if let Some(b) = block {
                    out.view_mut((j * n, k * n), (n, n)).copy_from(&b);
                }
            }
        }
        Ok(out)
    }
}

/// `Op(a(t))` as a grid matrix.
fn symbol_matrix(g: &QuantGrid, a: &SgSymbol, t: f64) -> Result<CMat, HypError> {
    Ok(pseudo_matrix_fn(g, |x, xi| Ok(Complex64::new(a.eval(t, 0.0, x, xi)?, 0.0)))?.m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypOptions {
    /// Time steps on `[0, T0]`.
    pub k: usize,
    /// Picard order cap.
    pub n_cap: usize,
    /// Stop at the first order with band-limited norm at most `tol`.
    pub tol: f64,
    pub eikonal_h: f64,
    pub eikonal_refine: usize,
    pub basis: BasisSpec,
}

impl Default for HypOptions {
    fn default() -> Self {
        HypOptions { k: 16, n_cap: 8, tol: 1e-10, eikonal_h: 1e-2, eikonal_refine: 2, basis: BasisSpec::default() }
    }
}

/// Quadrature weights on `n` uniform intervals of width `h`: composite
/// Simpson, with the 3/8 rule on the last three intervals when `n` is odd and
/// the trapezoid rule for `n = 1`.
pub fn time_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    match n {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        _ => {
            let simpson = if n % 2 == 0 { n } else { n - 3 };
            for p in (0..simpson).step_by(2) {
                w[p] += h / 3.0;
                w[p + 1] += 4.0 * h / 3.0;
                w[p + 2] += h / 3.0;
            }
            if simpson < n {
                let b = simpson;
                for (q, c) in [1.0, 3.0, 3.0, 1.0].into_iter().enumerate() {
                    w[b + q] += 3.0 * h / 8.0 * c;
                }
            }
        }
    }
    w
}

/// Values indexed by time pairs `(a, b)` with `a >= b`. For autonomous
/// systems only the offset `a - b` is stored.
#[derive(Debug, Clone)]
pub struct PairStore<T> {
    k: usize,
    autonomous: bool,
    items: Vec<T>,
}

impl<T: Send> PairStore<T> {
    fn representatives(k: usize, autonomous: bool) -> Vec<(usize, usize)> {
        if autonomous {
            (0..=k).map(|d| (d, 0)).collect()
        } else {
            (0..=k).flat_map(|a| (0..=a).map(move |b| (a, b))).collect()
        }
    }

    fn build<E: Send, F>(k: usize, autonomous: bool, f: F) -> Result<PairStore<T>, E>
    where
        F: Fn(usize, usize) -> Result<T, E> + Sync + Send,
    {
        let reps = Self::representatives(k, autonomous);
        let items = par::try_map(reps.len(), |p| f(reps[p].0, reps[p].1))?;
        Ok(PairStore { k, autonomous, items })
    }

    fn index(&self, a: usize, b: usize) -> usize {
        assert!(a >= b && a <= self.k, "time pair ({a}, {b}) out of range");
        if self.autonomous {
            a - b
        } else {
            a * (a + 1) / 2 + b
        }
    }

    pub fn get(&self, a: usize, b: usize) -> &T {
        &self.items[self.index(a, b)]
    }
}

/// `out(a, b) = sum_c w_c left(a, c) right(c, b)` over `c in [b, a]`.
fn convolve(dt: f64, size: usize, left: &PairStore<CMat>, right: &PairStore<CMat>) -> PairStore<CMat> {
    PairStore::build(left.k, left.autonomous, |a, b| {
        let w = time_weights(a - b, dt);
        let mut acc = CMat::zeros(size, size);
        for c in b..=a {
            if a > b && w[c - b] != 0.0 {
                acc += linalg::matmul(left.get(a, c), right.get(c, b)) * Complex64::new(w[c - b], 0.0);
            }
        }
        Ok::<_, HypError>(acc)
    })
    .expect("convolution is infallible")
}

fn block_diag(blocks: &[CMat]) -> CMat {
    let (r, c) = blocks[0].shape();
    let m = blocks.len();
    let mut out = CMat::zeros(m * r, m * c);
    for (j, b) in blocks.iter().enumerate() {
        out.view_mut((j * r, j * c), (r, c)).copy_from(b);
    }
    out
}

/// Eikonal phases `phi_j(theta_a, theta_b)` for `a = -lambda_j`.
pub fn build_phases(sys: &HyperbolicSystem, g: &QuantGrid, times: &[f64], opts: &HypOptions) -> Result<Vec<PairStore<EikonalPhase>>, HypError> {
    let k = times.len() - 1;
    let autonomous = sys.is_autonomous();
    let sweep = SweepOptions { h: opts.eikonal_h, refine: opts.eikonal_refine };
    let (xs, xis) = (g.xs(), g.xis());
    let mut out = Vec::with_capacity(sys.m());
    for (j, l) in sys.lambdas.iter().enumerate() {
        let a = Arc::new(l.scaled(-1.0));
        let fail = |source| HypError::Eikonal { component: j, source };
        let items = if autonomous {
            solve_eikonal_family(&a, 0.0, times, &xs, &xis, &sweep).map_err(fail)?
        } else {
            let mut items = Vec::new();
            let mut by_start: Vec<Vec<EikonalPhase>> = Vec::with_capacity(k + 1);
            for b in 0..=k {
                by_start.push(solve_eikonal_family(&a, times[b], &times[b..], &xs, &xis, &sweep).map_err(fail)?);
            }
            for a_idx in 0..=k {
                for b in 0..=a_idx {
                    items.push(by_start[b][a_idx - b].clone());
                }
            }
            items
        };
        out.push(PairStore { k, autonomous, items });
    }
    Ok(out)
}

/// Kernel matrices of `I_phi` and `D_t I_phi`, the latter through
/// `d_t phi = -lambda(t, x, phi'_x)`.
fn phase_operators(g: &QuantGrid, lambda: &SgSymbol, p: &EikonalPhase, t: f64) -> Result<(CMat, CMat), HypError> {
    let nxi = g.n;
    let i_phi = kernel_matrix(g, |k, j| Ok(Complex64::cis(p.phi_grid()[k * nxi + j])))?;
    let xs = g.xs();
    let dt = kernel_matrix(g, |k, j| {
        let idx = k * nxi + j;
        let v = -lambda.eval(t, 0.0, xs[k], p.phix_grid()[idx])?;
        Ok(Complex64::from_polar(v, p.phi_grid()[idx]))
    })?;
    Ok((i_phi, dt))
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeFit {
    /// Orders with norm above the noise floor.
    pub used_orders: usize,
    /// `C` with `||W_{nu+1}|| / ||W_nu|| ~ C T0 / nu`.
    pub c_fit: f64,
    pub ratios: Vec<f64>,
    pub within_factor3: bool,
    /// Least-squares slope of `log ||W_nu|| + log (nu-1)!` in `nu`.
    pub slope: f64,
    /// `sup ||W_1(t, s)||` over the time grid (full-grid norm).
    pub c_sup: f64,
    pub slope_ok: bool,
}

/// Truncated Picard series on a time grid.
#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    pub grid: QuantGrid,
    pub m: usize,
    pub t0: f64,
    pub times: Vec<f64>,
    pub dt: f64,
    pub autonomous: bool,
    iphi: PairStore<CMat>,
    dti: PairStore<CMat>,
    w1: PairStore<CMat>,
    v: PairStore<CMat>,
    e: PairStore<CMat>,
    /// `col0[nu - 1][c] = W_nu(theta_c, 0)`.
    col0: Vec<Vec<CMat>>,
    pub n: usize,
    pub converged: bool,
    pub order_norms: Vec<f64>,
    basis: BandBasis,
    block_q: CMat,
}

impl FundamentalSolution {
    pub fn build(sys: &HyperbolicSystem, g: &QuantGrid, opts: &HypOptions) -> Result<FundamentalSolution, HypError> {
        if opts.k < 2 {
            return Err(HypError::Invalid("need at least two time steps".into()));
        }
        if opts.n_cap == 0 {
            return Err(HypError::Invalid("Picard cap must be at least 1".into()));
        }
        let k = opts.k;
        let dt = sys.t0 / k as f64;
        let times: Vec<f64> = (0..=k).map(|a| a as f64 * dt).collect();
        sys.check_hyperbolic(g, &times)?;
        let m = sys.m();
        let n = g.n;
        let size = m * n;
        let autonomous = sys.is_autonomous();
        let phases = build_phases(sys, g, &times, opts)?;

        let ops = PairStore::build(k, autonomous, |a, b| {
            let mut is = Vec::with_capacity(m);
            let mut ds = Vec::with_capacity(m);
            for j in 0..m {
                let (i_phi, d) = phase_operators(g, &sys.lambdas[j], phases[j].get(a, b), times[a])?;
                // phi(s, s) = x xi exactly
                is.push(if a == b { linalg::identity(n) } else { i_phi });
                ds.push(d);
            }
            Ok::<_, HypError>((block_diag(&is), block_diag(&ds)))
        })?;
        drop(phases);
        let (iphi_items, dti_items): (Vec<CMat>, Vec<CMat>) = ops.items.into_iter().unzip();
        let iphi = PairStore { k, autonomous, items: iphi_items };
        let dti = PairStore { k, autonomous, items: dti_items };

        // generators per time node
        let gens: Vec<CMat> = if autonomous {
            vec![sys.generator(g, 0.0)?]
        } else {
            times.iter().map(|&t| sys.generator(g, t)).collect::<Result<_, _>>()?
        };
        let gen_at = |a: usize| if autonomous { &gens[0] } else { &gens[a] };
        let minus_i = Complex64::new(0.0, -1.0);
        let w1 = PairStore::build(k, autonomous, |a, b| {
            let li = dti.get(a, b) + linalg::matmul(gen_at(a), iphi.get(a, b));
            Ok::<_, HypError>(li * minus_i)
        })?;

        let basis = band_basis(g, &opts.basis);
        let block_q = block_diag(&vec![basis.q.clone(); m]);
        let norm = |mat: &CMat| linalg::op_norm_on(mat, &block_q);

        let mut col0 = vec![(0..=k).map(|c| w1.get(c, 0).clone()).collect::<Vec<_>>()];
        let mut order_norms = vec![norm(w1.get(k, 0))];
        let mut v = w1.clone();
        let mut current = w1.clone();
        let mut converged = order_norms[0] <= opts.tol;
        while !converged && order_norms.len() < opts.n_cap {
            let next = convolve(dt, size, &w1, &current);
            let nn = norm(next.get(k, 0));
            for (acc, w) in v.items.iter_mut().zip(&next.items) {
                *acc += w;
            }
            col0.push((0..=k).map(|c| next.get(c, 0).clone()).collect());
            order_norms.push(nn);
            current = next;
            converged = nn <= opts.tol;
            if order_norms.len() == 3 && !converged && order_norms[0] > 100.0 * opts.tol && order_norms[2] >= order_norms[1] && order_norms[1] >= order_norms[0] {
                return Err(HypError::NotDecaying(order_norms));
            }
        }
        let nterms = order_norms.len();

        let e_int = convolve(dt, size, &iphi, &v);
        let e = PairStore {
            k,
            autonomous,
            items: iphi.items.iter().zip(e_int.items).map(|(i, x)| i + x).collect(),
        };
        Ok(FundamentalSolution {
            grid: g.clone(),
            m,
            t0: sys.t0,
            times,
            dt,
            autonomous,
            iphi,
            dti,
            w1,
            v,
            e,
            col0,
            n: nterms,
            converged,
            order_norms,
            basis,
            block_q,
        })
    }

    pub fn k(&self) -> usize {
        self.times.len() - 1
    }

    pub fn e(&self, a: usize, b: usize) -> &CMat {
        self.e.get(a, b)
    }

    pub fn iphi(&self, a: usize, b: usize) -> &CMat {
        self.iphi.get(a, b)
    }

    pub fn w1(&self, a: usize, b: usize) -> &CMat {
        self.w1.get(a, b)
    }

    /// `sum_{nu <= N} W_nu(theta_a, theta_b)`.
    pub fn series(&self, a: usize, b: usize) -> &CMat {
        self.v.get(a, b)
    }

    /// `W_nu(theta_c, 0)`.
    pub fn order(&self, nu: usize, c: usize) -> &CMat {
        &self.col0[nu - 1][c]
    }

    pub fn basis(&self) -> &BandBasis {
        &self.basis
    }

    /// Operator norm on the block band-limited subspace.
    pub fn block_norm(&self, mat: &CMat) -> f64 {
        linalg::op_norm_on(mat, &self.block_q)
    }

    /// `E(s, s) = I` entrywise on every diagonal pair.
    pub fn identity_bit_exact(&self) -> bool {
        let id = linalg::identity(self.m * self.grid.n);
        (0..=self.k()).all(|a| *self.e(a, a) == id)
    }

    pub fn envelope(&self) -> EnvelopeFit {
        let floor = 1e-12 * self.order_norms[0].max(1e-300);
        let used = self.order_norms.iter().take_while(|&&v| v > floor && v > 0.0).count();
        let ratios: Vec<f64> = (1..used).map(|nu| self.order_norms[nu] / self.order_norms[nu - 1]).collect();
        let c_fit = if ratios.is_empty() {
            0.0
        } else {
            let mean = ratios.iter().enumerate().map(|(i, r)| (r * (i + 1) as f64).ln()).sum::<f64>() / ratios.len() as f64;
            mean.exp() / self.t0
        };
        let within_factor3 = ratios.iter().enumerate().all(|(i, &r)| {
            let env = c_fit * self.t0 / (i + 1) as f64;
            r <= 3.0 * env && r >= env / 3.0
        });
        let c_sup = self.w1.items.iter().map(linalg::sigma_max).fold(0.0, f64::max);
        let slope = if used >= 2 {
            let xs: Vec<f64> = (1..=used).map(|nu| nu as f64).collect();
            let ys: Vec<f64> = (1..=used).map(|nu| self.order_norms[nu - 1].ln() + ln_factorial(nu - 1)).collect();
            quantize::ls_slope(&xs, &ys)
        } else {
            f64::NEG_INFINITY
        };
        let slope_ok = used < 2 || slope <= (c_sup * self.t0).ln() + 1e-9;
        EnvelopeFit { used_orders: used, c_fit, ratios, within_factor3, slope, c_sup, slope_ok }
    }

    /// `|| sum_{nu<=N} W_nu - (W_1 + int W_1 sum_{nu<=N-1} W_nu) ||` at
    /// `(T0, 0)`: the series against its own recursion summed before
    /// integrating.
    pub fn telescoping_residual(&self) -> f64 {
        let k = self.k();
        let w = time_weights(k, self.dt);
        let size = self.m * self.grid.n;
        let minus_i = Complex64::new(0.0, -1.0);
        let li = |a: usize, c: usize| self.w1(a, c) * Complex64::new(0.0, 1.0);
        let mut rhs = li(k, 0) * minus_i;
        let mut integral = CMat::zeros(size, size);
        for c in 0..=k {
            let mut lower = CMat::zeros(size, size);
            for nu in 1..self.n {
                lower += self.order(nu, c);
            }
            integral += linalg::matmul(&li(k, c), &lower) * Complex64::new(w[c], 0.0);
        }
        rhs += integral * minus_i;
        self.block_norm(&(self.series(k, 0) - rhs))
    }

    /// `||(L E_n)(T0, 0)||` for `n = 1..N`, from
    /// `L E_n = i (W_1 - S_n + int W_1 S_n)` with `S_n = sum_{nu<=n} W_nu`.
    pub fn residual_by_order(&self) -> Vec<f64> {
        let k = self.k();
        let w = time_weights(k, self.dt);
        let size = self.m * self.grid.n;
        let mut partial: Vec<CMat> = vec![CMat::zeros(size, size); k + 1];
        let mut out = Vec::with_capacity(self.n);
        for nu in 1..=self.n {
            for (c, p) in partial.iter_mut().enumerate() {
                *p += self.order(nu, c);
            }
            let mut le = self.w1(k, 0) - &partial[k];
            for c in 0..=k {
                le += linalg::matmul(self.w1(k, c), &partial[c]) * Complex64::new(w[c], 0.0);
            }
            out.push(self.block_norm(&le));
        }
        out
    }

    /// `||int W_1(T0, th) W_N(th, 0) dth||`.
    pub fn last_term_integral(&self) -> f64 {
        let k = self.k();
        let w = time_weights(k, self.dt);
        let size = self.m * self.grid.n;
        let mut acc = CMat::zeros(size, size);
        for c in 0..=k {
            acc += linalg::matmul(self.w1(k, c), self.order(self.n, c)) * Complex64::new(w[c], 0.0);
        }
        self.block_norm(&acc)
    }

    /// `||E(a, c) E(c, b) - E(a, b)||`.
    pub fn semigroup_residual(&self, a: usize, c: usize, b: usize) -> f64 {
        let lhs = linalg::matmul(self.e(a, c), self.e(c, b));
        self.block_norm(&(lhs - self.e(a, b))) / self.block_norm(self.e(a, b)).max(1e-300)
    }

    /// Centered differences of `I_phi(., 0)` around `theta_a` with steps
    /// `dt` and `2 dt` against the eikonal `D_t I_phi`, relative.
    pub fn dt_check(&self, a: usize) -> [f64; 2] {
        let reference = self.dti.get(a, 0);
        let scale = self.block_norm(reference).max(1e-300);
        let minus_i = Complex64::new(0.0, -1.0);
        let fd = |step: usize| {
            let diff = self.iphi(a + step, 0) - self.iphi(a - step, 0);
            diff * (minus_i / (2.0 * step as f64 * self.dt))
        };
        [self.block_norm(&(fd(1) - reference)) / scale, self.block_norm(&(fd(2) - reference)) / scale]
    }

    pub fn report(&self) -> PicardReport {
        let k = self.k();
        let residual_by_order = self.residual_by_order();
        let last = self.last_term_integral();
        let final_residual = *residual_by_order.last().expect("at least one order");
        PicardReport {
            n: self.n,
            converged: self.converged,
            order_norms: self.order_norms.clone(),
            identity_bit_exact: self.identity_bit_exact(),
            envelope: self.envelope(),
            telescoping_residual: self.telescoping_residual(),
            residual_decreasing: residual_by_order.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-14),
            residual_vs_last_term: (final_residual - last).abs(),
            residual_by_order,
            semigroup_residual: self.semigroup_residual(k, k / 2, 0),
            w1_norm: self.block_norm(self.w1(k, 0)),
            dt_check: if k >= 4 { Some(self.dt_check(k / 2)) } else { None },
        }
    }
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|v| (v as f64).ln()).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardReport {
    pub n: usize,
    pub converged: bool,
    pub order_norms: Vec<f64>,
    pub identity_bit_exact: bool,
    pub envelope: EnvelopeFit,
    pub telescoping_residual: f64,
    pub residual_by_order: Vec<f64>,
    pub residual_decreasing: bool,
    /// `| ||L E_N|| - ||int W_1 W_N|| |`.
    pub residual_vs_last_term: f64,
    /// Relative `||E(T0, T0/2) E(T0/2, 0) - E(T0, 0)||`.
    pub semigroup_residual: f64,
    pub w1_norm: f64,
    /// Relative errors of centered `D_t` differences with steps `dt`, `2 dt`.
    pub dt_check: Option<[f64; 2]>,
}

/// Forcing `F(t)` as a stacked grid function of length `m N`.
pub type Forcing<'a> = &'a (dyn Fn(f64) -> CVec + Sync);

/// `W(theta_a) = E(theta_a, 0) G + i int_0^theta_a E(theta_a, s) F(s) ds`.
pub fn solve_cauchy(fs: &FundamentalSolution, g0: &CVec, forcing: Option<Forcing>) -> Result<Vec<CVec>, HypError> {
    let size = fs.m * fs.grid.n;
    if g0.len() != size {
        return Err(HypError::Invalid(format!("initial data has {} values, system needs {size}", g0.len())));
    }
    let fvals: Option<Vec<CVec>> = forcing.map(|f| fs.times.iter().map(|&t| f(t)).collect());
    if let Some(fv) = &fvals {
        if fv.iter().any(|v| v.len() != size) {
            return Err(HypError::Invalid(format!("forcing must have {size} values")));
        }
    }
    let out = par::map(fs.times.len(), |a| {
        let mut w = fs.e(a, 0) * g0;
        if let Some(fv) = &fvals {
            let wts = time_weights(a, fs.dt);
            for b in 0..=a {
                w += (fs.e(a, b) * &fv[b]) * Complex64::new(0.0, wts[b]);
            }
        }
        w
    });
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<CVec>,
    pub steps: usize,
}

/// Method-of-lines oracle: `dW/dt = -i (Lambda + R) W + i F` with RK4.
/// `steps` is the total number of RK4 steps on `[0, times.last()]`,
/// distributed over the requested output times; by default it keeps
/// `dt * rho <= 0.5` for the row-sum bound `rho` of the generator.
pub fn reference_solve(sys: &HyperbolicSystem, g: &QuantGrid, g0: &CVec, forcing: Option<Forcing>, times: &[f64], steps: Option<usize>) -> Result<ReferenceTrajectory, HypError> {
    let size = sys.m() * g.n;
    if g0.len() != size {
        return Err(HypError::Invalid(format!("initial data has {} values, system needs {size}", g0.len())));
    }
    if times.iter().any(|&t| t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(HypError::Invalid("output times must be non-negative and sorted".into()));
    }
    let tend = times.last().copied().unwrap_or(0.0);
    let autonomous = sys.is_autonomous();
    let fixed = if autonomous { Some(sys.generator(g, 0.0)?) } else { None };
    let total = match steps {
        Some(s) => s.max(1),
        None => {
            let gen = match &fixed {
                Some(m) => m.clone(),
                None => sys.generator(g, 0.0)?,
            };
            let rho = gen.row_iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
            ((tend * rho / 0.5).ceil() as usize).max(1)
        }
    };
    let minus_i = Complex64::new(0.0, -1.0);
    let rhs = |t: f64, w: &CVec| -> Result<CVec, HypError> {
        let gen = match &fixed {
            Some(m) => std::borrow::Cow::Borrowed(m),
            None => std::borrow::Cow::Owned(sys.generator(g, t)?),
        };
        let mut d = (gen.as_ref() * w) * minus_i;
        if let Some(f) = forcing {
            d += f(t) * Complex64::new(0.0, 1.0);
        }
        Ok(d)
    };
    let mut states = Vec::with_capacity(times.len());
    let mut w = g0.clone();
    let mut t = 0.0;
    let mut used = 0;
    for &target in times {
        let gap = target - t;
        if gap > 0.0 {
            let n = ((total as f64 * gap / tend).round() as usize).max(1);
            let h = gap / n as f64;
            for q in 0..n {
                let ts = t + q as f64 * h;
                let k1 = rhs(ts, &w)?;
                let k2 = rhs(ts + 0.5 * h, &(&w + &k1 * Complex64::new(0.5 * h, 0.0)))?;
                let k3 = rhs(ts + 0.5 * h, &(&w + &k2 * Complex64::new(0.5 * h, 0.0)))?;
                let k4 = rhs(ts + h, &(&w + &k3 * Complex64::new(h, 0.0)))?;
                let two = Complex64::new(2.0, 0.0);
                let nw = &w + (k1 + k2 * two + k3 * two + k4) * Complex64::new(h / 6.0, 0.0);
                let (from, to) = (linalg::norm(&w), linalg::norm(&nw));
                if (from > 0.0 && to > 10.0 * from) || !to.is_finite() {
                    return Err(HypError::Unstable { t: ts, from, to });
                }
                w = nw;
            }
            used += n;
            t = target;
        }
        states.push(w.clone());
    }
    Ok(ReferenceTrajectory { times: times.to_vec(), states, steps: used })
}

/// Stacked block norm `(sum_j ||W_j||_{r, rho}^2)^(1/2)`.
pub fn block_sobolev_norm(g: &QuantGrid, w: &CVec, m: usize, r: f64, rho: f64) -> Result<f64, HypError> {
    let n = g.n;
    let mut acc = 0.0;
    for j in 0..m {
        let part = w.rows(j * n, n).into_owned();
        acc += quantize::sobolev_norm(g, &part, r, rho)?.powi(2);
    }
    Ok(acc.sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct WellPosedReport {
    pub r: f64,
    pub ell: f64,
    /// Output weight index `r - (eps - 1)`.
    pub r_out: f64,
    pub samples: usize,
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `sup_t ||W(t)||_{r-(eps-1), ell} / ||G||_{r, ell}` over random band-limited
/// data without forcing.
pub fn wellposedness(sys: &HyperbolicSystem, fs: &FundamentalSolution, r: f64, ell: f64, samples: usize, seed: u64, bound: f64) -> Result<WellPosedReport, HypError> {
    let g = &fs.grid;
    let raw = &fs.basis().raw;
    let kcols = raw.ncols();
    let m = sys.m();
    let r_out = r - (sys.eps() - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0f64;
    let mut min_ratio = f64::INFINITY;
    for _ in 0..samples {
        let mut data = CVec::zeros(m * g.n);
        for j in 0..m {
            let c = CVec::from_iterator(kcols, (0..kcols).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))));
            data.rows_mut(j * g.n, g.n).copy_from(&(raw * c));
        }
        let denom = block_sobolev_norm(g, &data, m, r, ell)?;
        for w in solve_cauchy(fs, &data, None)? {
            let ratio = block_sobolev_norm(g, &w, m, r_out, ell)? / denom;
            max_ratio = max_ratio.max(ratio);
            min_ratio = min_ratio.min(ratio);
        }
    }
    Ok(WellPosedReport { r, ell, r_out, samples, max_ratio, min_ratio, bound, pass: max_ratio.is_finite() && max_ratio <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_integrate_cubics() {
        for n in 2..9 {
            let h = 0.1;
            let w = time_weights(n, h);
            let got: f64 = w.iter().enumerate().map(|(i, w)| w * (i as f64 * h).powi(3)).sum();
            let want = (n as f64 * h).powi(4) / 4.0;
            assert!((got - want).abs() < 1e-14, "n = {n}");
        }
        assert_eq!(time_weights(1, 2.0), vec![1.0, 1.0]);
        assert_eq!(time_weights(0, 2.0), vec![0.0]);
    }

    #[test]
    fn pair_store_indexing() {
        let s: PairStore<(usize, usize)> = PairStore::build(3, false, |a, b| Ok::<_, ()>((a, b))).unwrap();
        for a in 0..=3 {
            for b in 0..=a {
                assert_eq!(*s.get(a, b), (a, b));
            }
        }
        let s: PairStore<usize> = PairStore::build(3, true, |a, b| Ok::<_, ()>(a - b)).unwrap();
        assert_eq!(*s.get(3, 1), 2);
    }

    #[test]
    fn rejects_bad_orders() {
        let l = SgSymbol::parse("ang(xi)", 0.0, 1.0).unwrap();
        let r = SgSymbol::parse("1", 0.0, 0.0).unwrap();
        assert!(HyperbolicSystem::scalar(l.clone(), Some(r), 0.0, 0.1).is_err());
        assert!(HyperbolicSystem::scalar(l.clone(), None, 0.0, -1.0).is_err());
        let ls = SgSymbol::parse("s*xi", 0.0, 1.0).unwrap();
        assert!(HyperbolicSystem::scalar(ls, None, 0.0, 0.1).is_err());
        assert!(HyperbolicSystem::scalar(l, None, 0.0, 0.1).is_ok());
    }

    #[test]
    fn factorial_logs() {
        assert_eq!(ln_factorial(0), 0.0);
        assert!((ln_factorial(5) - 120f64.ln()).abs() < 1e-12);
    }
}
