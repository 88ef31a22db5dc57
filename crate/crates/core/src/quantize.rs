//! Grid realization of SG pseudodifferential operators and Fourier integral
//! operators on a periodic grid.
//!
//! `x_i = -L + i dx` with `dx = 2L/N` and `xi_j = (j - N/2) dxi` with
//! `dxi = pi/L`, so that `dx * dxi * N = 2 pi` and every transform is an FFT.
//! Forward transform `u^(xi) = sum_i e^{-i x_i xi} u_i dx`, inverse with
//! `dxi / (2 pi)`. A type I operator with kernel `K(x, xi) = e^{i phi} a` is
//! the matrix `M[k, i] = (1/N) sum_j K(x_k, xi_j) e^{-i x_i xi_j}`.

use crate::linalg::{self, CMat, CVec};
use crate::multiproduct::{MultiError, MultiProductPhase, PhaseChain, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::par;
use crate::phase::{PhaseError, PhaseFunction};
use crate::symbols::{ang, SgSymbol, SymbolError};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Multi(#[from] MultiError),
    #[error("grid: {0}")]
    Grid(String),
    #[error("numerically singular: {0}")]
    Singular(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type GridFunction = CVec;

/// Periodic grid with `N` points on `[-L, L)` and the matching frequency grid.
#[derive(Clone)]
pub struct QuantGrid {
    pub n: usize,
    pub l: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for QuantGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuantGrid").field("n", &self.n).field("l", &self.l).finish()
    }
}

impl QuantGrid {
    pub fn new(n: usize, l: f64) -> Result<QuantGrid, QuantError> {
        if n < 4 || n % 2 != 0 {
            return Err(QuantError::Grid(format!("N must be even and at least 4, got {n}")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(QuantError::Grid(format!("L must be positive, got {l}")));
        }
        let mut planner = FftPlanner::new();
        Ok(QuantGrid { n, l, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) })
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.l / self.n as f64
    }

    pub fn dxi(&self) -> f64 {
        PI / self.l
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.l + i as f64 * self.dx()
    }

    pub fn xi(&self, j: usize) -> f64 {
        (j as f64 - (self.n / 2) as f64) * self.dxi()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    pub fn xis(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.xi(j)).collect()
    }

    /// Largest frequency magnitude on the grid.
    pub fn xi_max(&self) -> f64 {
        (self.n / 2) as f64 * self.dxi()
    }

    /// `e^{i L xi_j}`, which is exactly `(-1)^(j + N/2)`.
    fn shift_sign(&self, j: usize) -> f64 {
        if (j + self.n / 2) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn alt(i: usize) -> f64 {
        if i % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Evaluate a function on the x-grid.
    pub fn sample<F: Fn(f64) -> Complex64>(&self, f: F) -> GridFunction {
        CVec::from_iterator(self.n, (0..self.n).map(|i| f(self.x(i))))
    }
}

fn check_len(g: &QuantGrid, u: &GridFunction) -> Result<(), QuantError> {
    if u.len() != g.n {
        return Err(QuantError::Grid(format!("grid function has {} values, grid has {}", u.len(), g.n)));
    }
    Ok(())
}

/// `u^(xi_j) = sum_i e^{-i x_i xi_j} u_i dx`.
pub fn fourier(g: &QuantGrid, u: &GridFunction) -> Result<GridFunction, QuantError> {
    check_len(g, u)?;
    let mut buf: Vec<Complex64> = u.iter().enumerate().map(|(i, v)| v * QuantGrid::alt(i)).collect();
    g.fwd.process(&mut buf);
    let dx = g.dx();
    Ok(CVec::from_iterator(g.n, buf.iter().enumerate().map(|(j, v)| v * (dx * g.shift_sign(j)))))
}

/// `u(x_i) = (2 pi)^-1 sum_j e^{i x_i xi_j} u^_j dxi`.
pub fn inverse_fourier(g: &QuantGrid, uh: &GridFunction) -> Result<GridFunction, QuantError> {
    check_len(g, uh)?;
    let mut buf: Vec<Complex64> = uh.iter().enumerate().map(|(j, v)| v * g.shift_sign(j)).collect();
    g.inv.process(&mut buf);
    let c = g.dxi() / (2.0 * PI);
    Ok(CVec::from_iterator(g.n, buf.iter().enumerate().map(|(i, v)| v * (c * QuantGrid::alt(i)))))
}

/// Direct quadrature of the forward transform at arbitrary frequencies.
pub fn fourier_direct(g: &QuantGrid, u: &GridFunction, xis: &[f64]) -> Vec<Complex64> {
    let dx = g.dx();
    xis.iter()
        .map(|&xi| (0..g.n).map(|i| u[i] * Complex64::from_polar(dx, -g.x(i) * xi)).sum())
        .collect()
}

/// Discrete `L^2` norm with the `dx` weight.
pub fn l2_norm(g: &QuantGrid, u: &GridFunction) -> f64 {
    (g.dx() * u.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
}

pub fn rel_l2(a: &GridFunction, b: &GridFunction) -> f64 {
    linalg::norm(&(a - b)) / linalg::norm(b)
}

/// `<x>^r <D>^rho u` as a grid function.
pub fn sobolev_weight(g: &QuantGrid, u: &GridFunction, r: f64, rho: f64) -> Result<GridFunction, QuantError> {
    let v = if rho == 0.0 {
        u.clone()
    } else {
        let mut uh = fourier(g, u)?;
        for (j, z) in uh.iter_mut().enumerate() {
            *z *= ang(g.xi(j)).powf(rho);
        }
        inverse_fourier(g, &uh)?
    };
    if r == 0.0 {
        return Ok(v);
    }
    Ok(CVec::from_iterator(g.n, v.iter().enumerate().map(|(i, z)| z * ang(g.x(i)).powf(r))))
}

/// `||u||_{r, rho} = || <x>^r <D>^rho u ||_{L^2}`.
pub fn sobolev_norm(g: &QuantGrid, u: &GridFunction, r: f64, rho: f64) -> Result<f64, QuantError> {
    Ok(l2_norm(g, &sobolev_weight(g, u, r, rho)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OpKind {
    Type1,
    Type2,
    Pseudo,
    Product,
}

/// Dense matrix of an operator in the grid basis.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub m: CMat,
    pub kind: OpKind,
}

impl OperatorMatrix {
    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        &self.m * u
    }

    pub fn adjoint(&self) -> OperatorMatrix {
        let kind = match self.kind {
            OpKind::Type1 => OpKind::Type2,
            OpKind::Type2 => OpKind::Type1,
            k => k,
        };
        OperatorMatrix { m: self.m.adjoint(), kind }
    }

    pub fn compose(&self, other: &OperatorMatrix) -> OperatorMatrix {
        OperatorMatrix { m: linalg::matmul(&self.m, &other.m), kind: OpKind::Product }
    }
}

/// Matrix of the operator with kernel `K(k, j)` sampled at `(x_k, xi_j)`.
pub fn kernel_matrix<F>(g: &QuantGrid, kernel: F) -> Result<CMat, QuantError>
where
    F: Fn(usize, usize) -> Result<Complex64, QuantError> + Sync,
{
    let n = g.n;
    let rows = par::try_map(n, |k| {
        let mut buf = Vec::with_capacity(n);
        for j in 0..n {
            buf.push(kernel(k, j)? * g.shift_sign(j));
        }
        g.fwd.process(&mut buf);
        let scale = 1.0 / n as f64;
        Ok::<_, QuantError>(buf.into_iter().enumerate().map(|(i, v)| v * (scale * QuantGrid::alt(i))).collect::<Vec<_>>())
    })?;
    Ok(CMat::from_fn(n, n, |k, i| rows[k][i]))
}

/// Type I operator from amplitude and phase callbacks.
pub fn type1_matrix_fn<A, P>(g: &QuantGrid, amp: A, phase: P) -> Result<OperatorMatrix, QuantError>
where
    A: Fn(f64, f64) -> Result<Complex64, QuantError> + Sync,
    P: Fn(f64, f64) -> Result<f64, QuantError> + Sync,
{
    let xs = g.xs();
    let xis = g.xis();
    let m = kernel_matrix(g, |k, j| {
        let (x, xi) = (xs[k], xis[j]);
        Ok(amp(x, xi)? * Complex64::cis(phase(x, xi)?))
    })?;
    Ok(OperatorMatrix { m, kind: OpKind::Type1 })
}

/// `Op_phi(a)` with `a` evaluated at `t = s = 0`.
pub fn type1_matrix(g: &QuantGrid, a: &SgSymbol, phi: &PhaseFunction) -> Result<OperatorMatrix, QuantError> {
    type1_matrix_fn(g, |x, xi| Ok(Complex64::new(a.eval(0.0, 0.0, x, xi)?, 0.0)), |x, xi| Ok(phi.value(x, xi)?))
}

/// `Op_phi(1)`.
pub fn fio_matrix(g: &QuantGrid, phi: &PhaseFunction) -> Result<OperatorMatrix, QuantError> {
    type1_matrix_fn(g, |_, _| Ok(Complex64::new(1.0, 0.0)), |x, xi| Ok(phi.value(x, xi)?))
}

/// `Op*_phi(b)`: the conjugate transpose of the type I matrix.
pub fn type2_matrix(g: &QuantGrid, b: &SgSymbol, phi: &PhaseFunction) -> Result<OperatorMatrix, QuantError> {
    Ok(type1_matrix(g, b, phi)?.adjoint())
}

/// Left quantization `Op(a)`.
pub fn pseudo_matrix_fn<A>(g: &QuantGrid, amp: A) -> Result<OperatorMatrix, QuantError>
where
    A: Fn(f64, f64) -> Result<Complex64, QuantError> + Sync,
{
    let mut op = type1_matrix_fn(g, amp, |x, xi| Ok(x * xi))?;
    op.kind = OpKind::Pseudo;
    Ok(op)
}

pub fn pseudo_matrix(g: &QuantGrid, a: &SgSymbol) -> Result<OperatorMatrix, QuantError> {
    pseudo_matrix_fn(g, |x, xi| Ok(Complex64::new(a.eval(0.0, 0.0, x, xi)?, 0.0)))
}

pub fn op_matrix(kind: OpKind, g: &QuantGrid, a: &SgSymbol, phi: &PhaseFunction) -> Result<OperatorMatrix, QuantError> {
    match kind {
        OpKind::Type1 => type1_matrix(g, a, phi),
        OpKind::Type2 => type2_matrix(g, a, phi),
        OpKind::Pseudo => pseudo_matrix(g, a),
        OpKind::Product => Err(QuantError::Precondition("products are built with OperatorMatrix::compose".into())),
    }
}

/// Result of a direct operator application with its truncation indicator.
#[derive(Debug, Clone)]
pub struct Applied {
    pub u: GridFunction,
    /// Largest boundary modulus relative to the peak of the input.
    pub boundary_ratio: f64,
    pub warning: Option<String>,
}

fn boundary_ratio(u: &GridFunction) -> f64 {
    let peak = u.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let n = u.len();
    let edge = [u[0].norm(), u[1].norm(), u[n - 2].norm(), u[n - 1].norm()].into_iter().fold(0.0, f64::max);
    if peak == 0.0 {
        0.0
    } else {
        edge / peak
    }
}

/// `(2 pi)^-1 sum_j e^{i phi(x, xi_j)} a(x, xi_j) u^(xi_j) dxi` at every node.
pub fn apply_type1(g: &QuantGrid, a: &SgSymbol, phi: &PhaseFunction, u: &GridFunction) -> Result<Applied, QuantError> {
    let uh = fourier(g, u)?;
    let xis = g.xis();
    let c = g.dxi() / (2.0 * PI);
    let vals = par::try_map(g.n, |k| {
        let x = g.x(k);
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &xi) in xis.iter().enumerate() {
            acc += Complex64::from_polar(a.eval(0.0, 0.0, x, xi)?, phi.value(x, xi)?) * uh[j];
        }
        Ok::<_, QuantError>(acc * c)
    })?;
    let ratio = boundary_ratio(u);
    let warning = (ratio > 1e-10).then(|| format!("input not decayed at the boundary (ratio {ratio:e}); wrap-around error of that size"));
    Ok(Applied { u: CVec::from_vec(vals), boundary_ratio: ratio, warning })
}

/// `Op*_phi(b) u` through the adjoint of the type I matrix.
pub fn apply_type2(g: &QuantGrid, b: &SgSymbol, phi: &PhaseFunction, u: &GridFunction) -> Result<Applied, QuantError> {
    check_len(g, u)?;
    let m = type2_matrix(g, b, phi)?;
    let ratio = boundary_ratio(u);
    let warning = (ratio > 1e-10).then(|| format!("input not decayed at the boundary (ratio {ratio:e}); wrap-around error of that size"));
    Ok(Applied { u: m.apply(u), boundary_ratio: ratio, warning })
}

/// Test functions spanning the band-limited subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSpec {
    pub centers: Vec<f64>,
    pub sigma: f64,
    pub freqs: Vec<f64>,
    /// Number of Hermite functions `h_0, ..., h_{k-1}`.
    pub hermite: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec { centers: vec![-3.0, 0.0, 3.0], sigma: 1.0, freqs: vec![-8.0, -4.0, 0.0, 4.0, 8.0], hermite: 8 }
    }
}

/// Raw and orthonormalized band-limited test functions as matrix columns.
#[derive(Debug, Clone)]
pub struct BandBasis {
    pub raw: CMat,
    pub q: CMat,
}

pub fn gaussian(g: &QuantGrid, center: f64, sigma: f64, freq: f64) -> GridFunction {
    g.sample(|x| {
        let d = (x - center) / sigma;
        Complex64::from_polar((-0.5 * d * d).exp(), freq * x)
    })
}

/// Hermite functions `h_0..h_{k-1}` on the grid, `L^2`-normalized.
pub fn hermite_functions(g: &QuantGrid, k: usize) -> Vec<GridFunction> {
    let xs = g.xs();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    for n in 0..k {
        let v: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| match n {
                0 => PI.powf(-0.25) * (-0.5 * x * x).exp(),
                1 => 2f64.sqrt() * x * out[0][i],
                _ => (2.0 / n as f64).sqrt() * x * out[n - 1][i] - ((n - 1) as f64 / n as f64).sqrt() * out[n - 2][i],
            })
            .collect();
        out.push(v);
    }
    out.into_iter().map(|v| CVec::from_iterator(g.n, v.into_iter().map(|r| Complex64::new(r, 0.0)))).collect()
}

pub fn band_basis(g: &QuantGrid, spec: &BasisSpec) -> BandBasis {
    let mut cols: Vec<GridFunction> = Vec::new();
    for &c in &spec.centers {
        for &f in &spec.freqs {
            cols.push(gaussian(g, c, spec.sigma, f));
        }
    }
    cols.extend(hermite_functions(g, spec.hermite));
    let raw = CMat::from_columns(&cols);
    let q = linalg::orthonormalize(&raw);
    BandBasis { raw, q }
}

/// `sup ||A u|| / ||u||` over the band-limited subspace.
pub fn op_norm(a: &CMat, basis: &BandBasis) -> f64 {
    linalg::op_norm_on(a, &basis.q)
}

/// `sup ||A u||_{out} / ||u||_{in}` over the band-limited subspace, for
/// Sobolev indices `(r, rho)`.
pub fn sobolev_op_norm(g: &QuantGrid, a: &CMat, basis: &BandBasis, input: (f64, f64), output: (f64, f64)) -> Result<f64, QuantError> {
    let k = basis.raw.ncols();
    let mut w_in = Vec::with_capacity(k);
    let mut w_out = Vec::with_capacity(k);
    let au = linalg::matmul(a, &basis.raw);
    for c in 0..k {
        w_in.push(sobolev_weight(g, &basis.raw.column(c).into_owned(), input.0, input.1)?);
        w_out.push(sobolev_weight(g, &au.column(c).into_owned(), output.0, output.1)?);
    }
    let b_in = CMat::from_columns(&w_in);
    let b_out = CMat::from_columns(&w_out);
    // c = V_k S_k^-1 y parametrizes the numerical range of b_in isometrically
    let svd = b_in.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| QuantError::Singular("SVD of the weighted basis failed".into()))?;
    let top = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * top).collect();
    if keep.is_empty() {
        return Err(QuantError::Singular("weighted basis is zero".into()));
    }
    let pinv = CMat::from_fn(k, keep.len(), |r, c| v_t[(keep[c], r)].conj() / svd.singular_values[keep[c]]);
    Ok(linalg::sigma_max(&linalg::matmul(&b_out, &pinv)))
}

#[derive(Debug, Clone, Serialize)]
pub struct InverseReport {
    #[serde(skip)]
    pub q_star: CMat,
    /// `||I_phi Q* - I||` on the band-limited subspace.
    pub residual: f64,
    /// `||Q* I_phi - I||` on the band-limited subspace.
    pub left_residual: f64,
    /// `||I_phi I_phi^* - I||` on the band-limited subspace; below 1 means
    /// the Neumann series converges there.
    pub a0_norm: f64,
}

/// Inverse of `I_phi = Op_phi(1)` as `Q* = M2 (M1 M2)^-1` with `M2 = M1^*`.
pub fn invert_iphi_matrix(m1: &CMat, basis: &BandBasis) -> Result<InverseReport, QuantError> {
    let n = m1.nrows();
    let m2 = m1.adjoint();
    let gram = linalg::matmul(m1, &m2);
    let a0_norm = op_norm(&(&gram - linalg::identity(n)), basis);
    let inv = gram.lu().try_inverse().ok_or_else(|| QuantError::Singular("I + A0 cannot be inverted; tau too large or grid too coarse".into()))?;
    let q_star = linalg::matmul(&m2, &inv);
    if q_star.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(QuantError::Singular("inverse has non-finite entries".into()));
    }
    let residual = op_norm(&(linalg::matmul(m1, &q_star) - linalg::identity(n)), basis);
    let left_residual = op_norm(&(linalg::matmul(&q_star, m1) - linalg::identity(n)), basis);
    Ok(InverseReport { q_star, residual, left_residual, a0_norm })
}

pub fn invert_iphi(g: &QuantGrid, phi: &PhaseFunction, basis: &BandBasis) -> Result<InverseReport, QuantError> {
    invert_iphi_matrix(&fio_matrix(g, phi)?.m, basis)
}

/// Raised-cosine taper equal to 1 on the inner 75% of `[-L, L]`.
pub fn taper(g: &QuantGrid, x: f64) -> f64 {
    let inner = 0.75 * g.l;
    let ax = x.abs();
    if ax <= inner {
        1.0
    } else if ax >= g.l {
        0.0
    } else {
        0.5 * (1.0 + (PI * (ax - inner) / (g.l - inner)).cos())
    }
}

/// Probed region for symbol extraction: `|x| <= L/2`, `|xi| <= xi_max/2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Probe {
    pub fn standard(g: &QuantGrid) -> Probe {
        let rows = (0..g.n).filter(|&i| g.x(i).abs() <= 0.5 * g.l).collect();
        let cols = (0..g.n).filter(|&j| g.xi(j).abs() <= 0.5 * g.xi_max()).collect();
        Probe { rows, cols }
    }
}

/// Symbol sampled on the probed region, row-major over `(rows, cols)`.
#[derive(Debug, Clone, Serialize)]
pub struct ExtractedSymbol {
    pub xs: Vec<f64>,
    pub xis: Vec<f64>,
    #[serde(skip)]
    pub values: Vec<Complex64>,
}

impl ExtractedSymbol {
    pub fn at(&self, a: usize, b: usize) -> Complex64 {
        self.values[a * self.xis.len() + b]
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn sup_dev_from_one(&self) -> f64 {
        self.values.iter().map(|z| (z - 1.0).norm()).fold(0.0, f64::max)
    }

    /// Weighted sup of `|p|`: `<x>^-m <xi>^-mu |p|`.
    pub fn weighted_sup(&self, m: f64, mu: f64) -> f64 {
        let mut best = 0.0f64;
        for (a, &x) in self.xs.iter().enumerate() {
            for (b, &xi) in self.xis.iter().enumerate() {
                best = best.max(ang(x).powf(-m) * ang(xi).powf(-mu) * self.at(a, b).norm());
            }
        }
        best
    }

    /// Weighted difference quotients `<x>^(1-m) <xi>^-mu |D_x p|` and
    /// `<x>^-m <xi>^(1-mu) |D_xi p|`.
    pub fn difference_quotients(&self, m: f64, mu: f64) -> (f64, f64) {
        let (nx, nxi) = (self.xs.len(), self.xis.len());
        let mut qx = 0.0f64;
        let mut qxi = 0.0f64;
        for a in 0..nx {
            for b in 0..nxi {
                let (x, xi) = (self.xs[a], self.xis[b]);
                let w = ang(x).powf(-m) * ang(xi).powf(-mu);
                if a + 1 < nx {
                    let d = (self.at(a + 1, b) - self.at(a, b)).norm() / (self.xs[a + 1] - x);
                    qx = qx.max(w * ang(x) * d);
                }
                if b + 1 < nxi {
                    let d = (self.at(a, b + 1) - self.at(a, b)).norm() / (self.xis[b + 1] - xi);
                    qxi = qxi.max(w * ang(xi) * d);
                }
            }
        }
        (qx, qxi)
    }
}

/// `p(x_i, xi_j) = e^{-i phi(x_i, xi_j)} (P w_j)(x_i)` with `w_j` the tapered
/// plane wave of frequency `xi_j`.
pub fn extract_symbol<F>(g: &QuantGrid, op: &CMat, probe: &Probe, phase: F) -> Result<ExtractedSymbol, QuantError>
where
    F: Fn(usize, usize) -> Result<f64, QuantError> + Sync,
{
    let w = CMat::from_fn(g.n, probe.cols.len(), |i, b| {
        let x = g.x(i);
        Complex64::from_polar(taper(g, x), x * g.xi(probe.cols[b]))
    });
    let pw = linalg::matmul(op, &w);
    let nb = probe.cols.len();
    let rows = par::try_map(probe.rows.len(), |a| {
        let i = probe.rows[a];
        (0..nb).map(|b| Ok(pw[(i, b)] * Complex64::cis(-phase(a, b)?))).collect::<Result<Vec<_>, QuantError>>()
    })?;
    Ok(ExtractedSymbol {
        xs: probe.rows.iter().map(|&i| g.x(i)).collect(),
        xis: probe.cols.iter().map(|&j| g.xi(j)).collect(),
        values: rows.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComposeReport {
    pub sup_p: f64,
    pub sup_p_minus_one: f64,
    /// `sup <x> |D_x p|` over the probed region.
    pub dq_x: f64,
    /// `sup <xi> |D_xi p|` over the probed region.
    pub dq_xi: f64,
    pub probed_nodes: usize,
    pub symbol: ExtractedSymbol,
}

/// Product phase on the probed nodes.
pub fn product_on_probe(g: &QuantGrid, chain: &PhaseChain, probe: &Probe) -> Result<MultiProductPhase, QuantError> {
    let xs: Vec<f64> = probe.rows.iter().map(|&i| g.x(i)).collect();
    let xis: Vec<f64> = probe.cols.iter().map(|&j| g.xi(j)).collect();
    Ok(MultiProductPhase::solve(chain, &xs, &xis, DEFAULT_TOL, DEFAULT_MAX_ITER)?)
}

/// `I_{phi_1} I_{phi_2} = Op_{phi_1 # phi_2}(p)`: extract `p` by probing.
pub fn compose_extract_symbol(g: &QuantGrid, chain: &PhaseChain) -> Result<(MultiProductPhase, ComposeReport), QuantError> {
    if chain.phases().len() != 2 {
        return Err(QuantError::Precondition(format!("need exactly two phases, got {}", chain.phases().len())));
    }
    let probe = Probe::standard(g);
    let prod = product_on_probe(g, chain, &probe)?;
    let m1 = fio_matrix(g, &chain.phases()[0])?;
    let m2 = fio_matrix(g, &chain.phases()[1])?;
    let p = linalg::matmul(&m1.m, &m2.m);
    let sym = extract_symbol(g, &p, &probe, |a, b| Ok(prod.point(a, b).value))?;
    let (dq_x, dq_xi) = sym.difference_quotients(0.0, 0.0);
    let report = ComposeReport {
        sup_p: sym.sup(),
        sup_p_minus_one: sym.sup_dev_from_one(),
        dq_x,
        dq_xi,
        probed_nodes: sym.values.len(),
        symbol: sym,
    };
    Ok((prod, report))
}

/// One factor `Op_{phi_j}(a_j)` of a chain.
#[derive(Debug, Clone)]
pub struct ChainFactor {
    pub a: SgSymbol,
    pub phi: PhaseFunction,
    pub tau: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    /// `||A - R_1 ... R_M I_{Phi_M}||` on the band-limited subspace.
    pub factorization_residual: f64,
    pub op_norm: f64,
    /// Residuals of the inverses `Q*_j`.
    pub inverse_residuals: Vec<f64>,
    /// Weighted sup (l = 0) and difference quotients (l = 1) of the extracted
    /// total symbol in the summed order.
    pub symbol_seminorm: [f64; 2],
    /// Products of the factor seminorms at `l = 0, 1`.
    pub factor_product: [f64; 2],
    /// `symbol_seminorm / factor_product`.
    pub ratio: [f64; 2],
}

/// Weighted sup of `a` and of its first derivatives over the probed nodes.
fn probed_seminorms(g: &QuantGrid, probe: &Probe, a: &SgSymbol) -> Result<[f64; 2], QuantError> {
    let (m, mu) = a.order();
    let mut out = [0.0f64; 2];
    for &i in &probe.rows {
        let x = g.x(i);
        for &j in &probe.cols {
            let xi = g.xi(j);
            let w = ang(x).powf(-m) * ang(xi).powf(-mu);
            let v0 = w * a.eval(0.0, 0.0, x, xi)?.abs();
            let vx = w * ang(x) * a.dxx(1, 0, 0.0, 0.0, x, xi)?.abs();
            let vxi = w * ang(xi) * a.dxx(0, 1, 0.0, 0.0, x, xi)?.abs();
            out[0] = out[0].max(v0);
            out[1] = out[1].max(v0).max(vx).max(vxi);
        }
    }
    Ok(out)
}

/// `A = A_1 ... A_M` against the factorization `R_1 ... R_M I_{Phi_M}` with
/// `Phi_j = phi_1 # ... # phi_j` and `R_j = I_{Phi_{j-1}} A_j Q*_j`.
pub fn compose_chain(g: &QuantGrid, factors: &[ChainFactor], basis: &BandBasis) -> Result<(MultiProductPhase, ChainReport), QuantError> {
    if factors.len() < 2 {
        return Err(QuantError::Precondition(format!("need at least two factors, got {}", factors.len())));
    }
    let n = g.n;
    let mats = factors.iter().map(|f| type1_matrix(g, &f.a, &f.phi)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&CMat> = mats.iter().map(|m| &m.m).collect();
    let a = linalg::chain_product(&refs);

    // I_{Phi_j} for j = 1..M
    let (xs, xis) = (g.xs(), g.xis());
    let mut iphi: Vec<CMat> = vec![fio_matrix(g, &factors[0].phi)?.m];
    let mut last: Option<MultiProductPhase> = None;
    for j in 2..=factors.len() {
        let chain = PhaseChain::new(factors[..j].iter().map(|f| f.phi.clone()).collect(), factors[..j].iter().map(|f| f.tau).collect())?;
        let prod = MultiProductPhase::solve(&chain, &xs, &xis, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        let nxi = xis.len();
        let m = kernel_matrix(g, |k, jj| Ok(Complex64::cis(prod.points()[k * nxi + jj].value)))?;
        iphi.push(m);
        last = Some(prod);
    }
    let mut inverse_residuals = Vec::new();
    let mut q_stars = Vec::new();
    for m in &iphi {
        let inv = invert_iphi_matrix(m, basis)?;
        inverse_residuals.push(inv.residual);
        q_stars.push(inv.q_star);
    }
    let mut f = linalg::identity(n);
    for j in 0..factors.len() {
        let left = if j == 0 { linalg::matmul(refs[0], &q_stars[0]) } else { linalg::chain_product(&[&iphi[j - 1], refs[j], &q_stars[j]]) };
        f = linalg::matmul(&f, &left);
    }
    f = linalg::matmul(&f, &iphi[factors.len() - 1]);
    let factorization_residual = op_norm(&(&a - &f), basis);

    let probe = Probe::standard(g);
    let prod = last.expect("at least two factors");
    let nxi = g.n;
    let sym = extract_symbol(g, &a, &probe, |r, c| Ok(prod.points()[probe.rows[r] * nxi + probe.cols[c]].value))?;
    let (m, mu) = factors.iter().fold((0.0, 0.0), |acc, f| (acc.0 + f.a.order().0, acc.1 + f.a.order().1));
    let s0 = sym.weighted_sup(m, mu);
    let (qx, qxi) = sym.difference_quotients(m, mu);
    let symbol_seminorm = [s0, s0.max(qx).max(qxi)];
    let mut factor_product = [1.0, 1.0];
    for fct in factors {
        let s = probed_seminorms(g, &probe, &fct.a)?;
        factor_product[0] *= s[0];
        factor_product[1] *= s[1];
    }
    let report = ChainReport {
        factorization_residual,
        op_norm: op_norm(&a, basis),
        inverse_residuals,
        symbol_seminorm,
        factor_product,
        ratio: [symbol_seminorm[0] / factor_product[0], symbol_seminorm[1] / factor_product[1]],
    };
    Ok((prod, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub lambdas: Vec<f64>,
    /// `||D u_lambda|| / ||u_lambda||`.
    pub ratios: Vec<f64>,
    /// Least-squares slope of `log ratio` against `log lambda`.
    pub slope: f64,
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

/// `D = Op(p) Op_phi(a) - Op_phi(c)` with `c(x, xi) = p(x, phi'_x) a(x, xi)`,
/// applied to `u(x) e^{i lambda x}` with a Gaussian `u`.
pub fn first_order_expansion_check(g: &QuantGrid, p: &SgSymbol, a: &SgSymbol, phi: &PhaseFunction, lambdas: &[f64]) -> Result<ExpansionReport, QuantError> {
    let op_p = pseudo_matrix(g, p)?;
    let op_a = type1_matrix(g, a, phi)?;
    let op_c = type1_matrix_fn(
        g,
        |x, xi| {
            let (px, _) = phi.grad(x, xi)?;
            Ok(Complex64::new(p.eval(0.0, 0.0, x, px)? * a.eval(0.0, 0.0, x, xi)?, 0.0))
        },
        |x, xi| Ok(phi.value(x, xi)?),
    )?;
    let d = linalg::matmul(&op_p.m, &op_a.m) - op_c.m;
    let mut ratios = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let u = gaussian(g, 0.0, 1.0, lam);
        ratios.push(linalg::norm(&(&d * &u)) / linalg::norm(&u));
    }
    let lx: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let ly: Vec<f64> = ratios.iter().map(|r| r.max(1e-300).ln()).collect();
    Ok(ExpansionReport { lambdas: lambdas.to_vec(), ratios, slope: ls_slope(&lx, &ly) })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundednessReport {
    pub r: f64,
    pub rho: f64,
    pub samples: usize,
    pub max_ratio: f64,
    pub min_ratio: f64,
    /// Operator norm `H^{r,rho} -> H^{r-m,rho-mu}` on the whole subspace.
    pub subspace_bound: f64,
    pub pass: bool,
}

/// `||Op(a) u||_{r-m, rho-mu} / ||u||_{r, rho}` for random band-limited `u`.
pub fn boundedness_check(g: &QuantGrid, a: &SgSymbol, r: f64, rho: f64, basis: &BandBasis, seed: u64, samples: usize) -> Result<BoundednessReport, QuantError> {
    let (m, mu) = a.order();
    let op = pseudo_matrix(g, a)?;
    let bound = sobolev_op_norm(g, &op.m, basis, (r, rho), (r - m, rho - mu))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = basis.raw.ncols();
    let mut max_ratio = 0.0f64;
    let mut min_ratio = f64::INFINITY;
    for _ in 0..samples {
        let c = CVec::from_iterator(k, (0..k).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))));
        let u = &basis.raw * c;
        let ratio = sobolev_norm(g, &op.apply(&u), r - m, rho - mu)? / sobolev_norm(g, &u, r, rho)?;
        max_ratio = max_ratio.max(ratio);
        min_ratio = min_ratio.min(ratio);
    }
    Ok(BoundednessReport { r, rho, samples, max_ratio, min_ratio, subspace_bound: bound, pass: max_ratio <= bound * (1.0 + 1e-9) && max_ratio.is_finite() })
}
