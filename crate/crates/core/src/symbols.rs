//! SG symbols with declared orders, grid seminorms and order/ellipticity checks.

use crate::expr::{self, EvalError, Expr, ParseError, Program, Var};
use crate::par;
use serde::Serialize;
use thiserror::Error;

/// The weight `sqrt(1 + v^2)`.
#[inline]
pub fn ang(v: f64) -> f64 {
    v.hypot(1.0)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymbolError {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("evaluation failed at (t,s,x,xi)={at:?}: {err}")]
    Eval { err: EvalError, at: [f64; 4] },
    #[error("derivative of total order {requested} exceeds the symbol's cap {cap}")]
    OrderExceeded { requested: usize, cap: usize },
    #[error("derivative tree for order {order:?} has depth {depth}, above cap {cap}")]
    DepthExceeded { order: [usize; 4], depth: usize, cap: usize },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("no grid points with |x|+|xi| >= {0}")]
    GridTooSmall(f64),
}

/// Uniform tensor grid on `[-lx, lx] x [-lxi, lxi]`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleGrid {
    pub lx: f64,
    pub lxi: f64,
    pub nx: usize,
    pub nxi: usize,
}

fn linspace(l: f64, n: usize, i: usize) -> f64 {
    -l + i as f64 * (2.0 * l / (n - 1) as f64)
}

impl SampleGrid {
    pub fn new(lx: f64, lxi: f64, nx: usize, nxi: usize) -> Result<SampleGrid, SymbolError> {
        if nx < 2 || nxi < 2 {
            return Err(SymbolError::Grid(format!("need at least 2 points per axis, got {nx}x{nxi}")));
        }
        if !(lx > 0.0 && lxi > 0.0 && lx.is_finite() && lxi.is_finite()) {
            return Err(SymbolError::Grid(format!("degenerate ranges lx={lx}, lxi={lxi}")));
        }
        Ok(SampleGrid { lx, lxi, nx, nxi })
    }

    pub fn square(l: f64, n: usize) -> SampleGrid {
        SampleGrid::new(l, l, n, n).expect("valid square grid")
    }

    pub fn x(&self, i: usize) -> f64 {
        linspace(self.lx, self.nx, i)
    }

    pub fn xi(&self, j: usize) -> f64 {
        linspace(self.lxi, self.nxi, j)
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn xis(&self) -> Vec<f64> {
        (0..self.nxi).map(|j| self.xi(j)).collect()
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.lx / (self.nx - 1) as f64
    }

    pub fn dxi(&self) -> f64 {
        2.0 * self.lxi / (self.nxi - 1) as f64
    }

    /// Same ranges, spacing halved; the old nodes are kept.
    pub fn refined(&self) -> SampleGrid {
        SampleGrid { nx: 2 * self.nx - 1, nxi: 2 * self.nxi - 1, ..*self }
    }

    pub fn len(&self) -> usize {
        self.nx * self.nxi
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Options controlling how many derivative trees a symbol precomputes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolOptions {
    pub max_order: usize,
    pub depth_cap: usize,
}

impl Default for SymbolOptions {
    fn default() -> Self {
        SymbolOptions { max_order: 4, depth_cap: expr::DEFAULT_DEPTH_CAP }
    }
}

/// A real symbol `a(t, s, x, xi)` with exact derivatives up to a fixed total
/// order and a declared SG order `(m, mu)`.
#[derive(Debug, Clone)]
pub struct SgSymbol {
    source: String,
    expr: Expr,
    order: (f64, f64),
    max_order: usize,
    slots: Vec<usize>,
    trees: Vec<Expr>,
    progs: Vec<Program>,
}

const NONE: usize = usize::MAX;

impl SgSymbol {
    pub fn parse(text: &str, m: f64, mu: f64) -> Result<SgSymbol, SymbolError> {
        SgSymbol::parse_with(text, m, mu, SymbolOptions::default())
    }

    pub fn parse_with(text: &str, m: f64, mu: f64, opts: SymbolOptions) -> Result<SgSymbol, SymbolError> {
        let e = expr::parse(text)?;
        SgSymbol::from_expr(e, m, mu, text.to_string(), opts)
    }

    /// Named symbols usable from configs without an expression.
    pub fn builtin(name: &str) -> Option<SgSymbol> {
        let (text, m, mu) = match name {
            "one" => ("1", 0.0, 0.0),
            "ang_x" => ("ang(x)", 1.0, 0.0),
            "ang_xi" => ("ang(xi)", 0.0, 1.0),
            "inv_ang_xi" => ("1/ang(xi)", 0.0, -1.0),
            _ => return None,
        };
        let mut s = SgSymbol::parse(text, m, mu).ok()?;
        s.source = format!("builtin:{name}");
        Some(s)
    }

    pub fn from_expr(e: Expr, m: f64, mu: f64, source: String, opts: SymbolOptions) -> Result<SgSymbol, SymbolError> {
        let k = opts.max_order;
        let side = k + 1;
        let mut slots = vec![NONE; side.pow(4)];
        let mut trees: Vec<Expr> = Vec::new();
        let key = |o: [usize; 4]| ((o[0] * side + o[1]) * side + o[2]) * side + o[3];
        for total in 0..=k {
            for nx in 0..=total {
                for nxi in 0..=(total - nx) {
                    for nt in 0..=(total - nx - nxi) {
                        let ns = total - nx - nxi - nt;
                        let o = [nx, nxi, nt, ns];
                        let tree = if total == 0 {
                            e.clone()
                        } else {
                            // derive from the tuple with one fewer derivative
                            let (pos, var) = if nx > 0 {
                                (0, Var::X)
                            } else if nxi > 0 {
                                (1, Var::Xi)
                            } else if nt > 0 {
                                (2, Var::T)
                            } else {
                                (3, Var::S)
                            };
                            let mut lower = o;
                            lower[pos] -= 1;
                            trees[slots[key(lower)]].differentiate(var)
                        };
                        let depth = tree.depth();
                        if depth > opts.depth_cap {
                            return Err(SymbolError::DepthExceeded { order: o, depth, cap: opts.depth_cap });
                        }
                        slots[key(o)] = trees.len();
                        trees.push(tree);
                    }
                }
            }
        }
        let progs = trees.iter().map(Program::compile).collect();
        Ok(SgSymbol { source, expr: e, order: (m, mu), max_order: k, slots, trees, progs })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn order(&self) -> (f64, f64) {
        self.order
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// True if the symbol does not depend on `t` or `s`.
    pub fn is_autonomous(&self) -> bool {
        !self.expr.uses(Var::T) && !self.expr.uses(Var::S)
    }

    /// True if the symbol refers to the initial time `s`.
    pub fn depends_on_s(&self) -> bool {
        self.expr.uses(Var::S)
    }

    pub fn depends_on_x(&self) -> bool {
        self.expr.uses(Var::X)
    }

    /// A copy of this symbol scaled by `c`, keeping the declared order.
    pub fn scaled(&self, c: f64) -> SgSymbol {
        let e = Expr::Mul(Box::new(Expr::num(c)), Box::new(self.expr.clone()));
        let opts = SymbolOptions { max_order: self.max_order, depth_cap: usize::MAX };
        let mut s = SgSymbol::from_expr(e, self.order.0, self.order.1, String::new(), opts)
            .expect("scaling cannot exceed an unbounded depth cap");
        s.source = format!("{c}*({})", self.source);
        s
    }

    fn slot(&self, o: [usize; 4]) -> Result<usize, SymbolError> {
        let total: usize = o.iter().sum();
        if total > self.max_order {
            return Err(SymbolError::OrderExceeded { requested: total, cap: self.max_order });
        }
        let side = self.max_order + 1;
        Ok(self.slots[((o[0] * side + o[1]) * side + o[2]) * side + o[3]])
    }

    /// Derivative tree `d_x^nx d_xi^nxi d_t^nt d_s^ns a`.
    pub fn derivative_expr(&self, nx: usize, nxi: usize, nt: usize, ns: usize) -> Result<&Expr, SymbolError> {
        Ok(&self.trees[self.slot([nx, nxi, nt, ns])?])
    }

    pub fn eval(&self, t: f64, s: f64, x: f64, xi: f64) -> Result<f64, SymbolError> {
        let at = [t, s, x, xi];
        self.progs[0].eval(at).map_err(|err| SymbolError::Eval { err, at })
    }

    pub fn deriv(&self, nx: usize, nxi: usize, nt: usize, ns: usize, t: f64, s: f64, x: f64, xi: f64) -> Result<f64, SymbolError> {
        let at = [t, s, x, xi];
        self.progs[self.slot([nx, nxi, nt, ns])?].eval(at).map_err(|err| SymbolError::Eval { err, at })
    }

    /// Spatial derivative `d_x^nx d_xi^nxi a` at time `(t, s)`.
    #[inline]
    pub fn dxx(&self, nx: usize, nxi: usize, t: f64, s: f64, x: f64, xi: f64) -> Result<f64, SymbolError> {
        self.deriv(nx, nxi, 0, 0, t, s, x, xi)
    }

    /// Compare every derivative against a central difference of the
    /// derivative one order below, at the given points. Returns the worst
    /// relative discrepancy.
    pub fn self_test(&self, points: &[[f64; 4]], h: f64) -> Result<f64, SymbolError> {
        let mut worst = 0.0f64;
        let side = self.max_order + 1;
        for nx in 0..side {
            for nxi in 0..side {
                for nt in 0..side {
                    for ns in 0..side {
                        let o = [nx, nxi, nt, ns];
                        let total: usize = o.iter().sum();
                        if total == 0 || total > self.max_order {
                            continue;
                        }
                        let pos = o.iter().position(|&k| k > 0).unwrap();
                        let mut lower = o;
                        lower[pos] -= 1;
                        let slot_var = [2usize, 3, 0, 1][pos];
                        for p in points {
                            let exact = self.deriv(o[0], o[1], o[2], o[3], p[0], p[1], p[2], p[3])?;
                            let step = h * p[slot_var].abs().max(1.0);
                            let mut pp = *p;
                            pp[slot_var] = p[slot_var] + step;
                            let up = self.deriv(lower[0], lower[1], lower[2], lower[3], pp[0], pp[1], pp[2], pp[3])?;
                            pp[slot_var] = p[slot_var] - step;
                            let dn = self.deriv(lower[0], lower[1], lower[2], lower[3], pp[0], pp[1], pp[2], pp[3])?;
                            let fd = (up - dn) / (2.0 * step);
                            let scale = exact.abs().max(fd.abs()).max(1e-3 * up.abs().max(dn.abs()).max(1.0));
                            worst = worst.max((exact - fd).abs() / scale);
                        }
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// Location of a weighted supremum on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupReport {
    pub value: f64,
    /// Number of xi-derivatives.
    pub alpha: usize,
    /// Number of x-derivatives.
    pub beta: usize,
    pub x: f64,
    pub xi: f64,
}

/// `max_{alpha+beta<=l} sup_grid <x>^{-m+beta} <xi>^{-mu+alpha} |d_xi^alpha d_x^beta a|`
/// evaluated at time `(t, s)`, with the worst offender.
pub fn weighted_sup(a: &SgSymbol, l: usize, m: f64, mu: f64, g: &SampleGrid, t: f64, s: f64) -> Result<SupReport, SymbolError> {
    if l > a.max_order() {
        return Err(SymbolError::OrderExceeded { requested: l, cap: a.max_order() });
    }
    let rows = par::try_map(g.nx, |i| {
        let x = g.x(i);
        let wx = ang(x);
        let mut best = SupReport { value: 0.0, alpha: 0, beta: 0, x, xi: g.xi(0) };
        for j in 0..g.nxi {
            let xi = g.xi(j);
            let wxi = ang(xi);
            for k in 0..=l {
                for beta in 0..=k {
                    let alpha = k - beta;
                    let d = a.dxx(beta, alpha, t, s, x, xi)?;
                    let v = wx.powf(-m + beta as f64) * wxi.powf(-mu + alpha as f64) * d.abs();
                    if v > best.value {
                        best = SupReport { value: v, alpha, beta, x, xi };
                    }
                }
            }
        }
        Ok::<_, SymbolError>(best)
    })?;
    let mut best = rows[0];
    for r in &rows[1..] {
        if r.value > best.value {
            best = *r;
        }
    }
    Ok(best)
}

/// Grid lower bound for the seminorm `||a||_l^{m,mu}` at `t = s = 0`.
pub fn seminorm(a: &SgSymbol, l: usize, m: f64, mu: f64, g: &SampleGrid) -> Result<f64, SymbolError> {
    Ok(weighted_sup(a, l, m, mu, g, 0.0, 0.0)?.value)
}

pub fn seminorm_at(a: &SgSymbol, l: usize, m: f64, mu: f64, g: &SampleGrid, t: f64, s: f64) -> Result<f64, SymbolError> {
    Ok(weighted_sup(a, l, m, mu, g, t, s)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderReport {
    pub pass: bool,
    pub seminorm: f64,
    pub bound: f64,
    pub worst: SupReport,
}

/// Does the grid seminorm stay below `c`? Only a failure is conclusive.
pub fn check_order(a: &SgSymbol, m: f64, mu: f64, l: usize, g: &SampleGrid, c: f64) -> Result<OrderReport, SymbolError> {
    let worst = weighted_sup(a, l, m, mu, g, 0.0, 0.0)?;
    Ok(OrderReport { pass: worst.value <= c, seminorm: worst.value, bound: c, worst })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticReport {
    pub pass: bool,
    /// Best constant: the grid minimum of `|a| / (<x>^m <xi>^mu)`.
    pub c: f64,
    pub points: usize,
    pub x: f64,
    pub xi: f64,
}

/// Ellipticity on the grid points with `|x| + |xi| >= r`.
pub fn check_elliptic(a: &SgSymbol, m: f64, mu: f64, r: f64, g: &SampleGrid) -> Result<EllipticReport, SymbolError> {
    let rows = par::try_map(g.nx, |i| {
        let x = g.x(i);
        let mut best: Option<(f64, f64)> = None;
        let mut count = 0usize;
        for j in 0..g.nxi {
            let xi = g.xi(j);
            if x.abs() + xi.abs() < r {
                continue;
            }
            count += 1;
            let v = a.eval(0.0, 0.0, x, xi)?.abs() / (ang(x).powf(m) * ang(xi).powf(mu));
            if best.is_none_or(|(b, _)| v < b) {
                best = Some((v, xi));
            }
        }
        Ok::<_, SymbolError>((best, count, x))
    })?;
    let mut out: Option<EllipticReport> = None;
    let mut total = 0;
    for (best, count, x) in rows {
        total += count;
        if let Some((v, xi)) = best {
            if out.is_none_or(|o| v < o.c) {
                out = Some(EllipticReport { pass: false, c: v, points: 0, x, xi });
            }
        }
    }
    let mut rep = out.ok_or(SymbolError::GridTooSmall(r))?;
    rep.points = total;
    rep.pass = rep.c > 0.0;
    Ok(rep)
}
