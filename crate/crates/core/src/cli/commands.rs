//! The six experiments.

use super::config::{ExperimentConfig, PhaseSpec, Subcommand, SymbolSpec, SystemSpec};
use super::report::{Artifacts, Check, Report, Table};
use super::svg::{heatmap, line_plot, Series};
use super::CliError;
use crate::eikonal::{solve_eikonal, solve_eikonal_family, EikonalPhase, ShootOptions, SweepOptions};
use crate::hyperbolic::{reference_solve, solve_cauchy, wellposedness, FundamentalSolution, HypOptions, HyperbolicSystem};
use crate::linalg::{self, CVec};
use crate::multiproduct::{random_start, solve_critical_from, verify_structure, MultiProductPhase, PhaseChain};
use crate::phase::{certify_regular, j_seminorm, j_weighted_sups, PhaseFunction};
use crate::quantize::{
    band_basis, compose_chain, compose_extract_symbol, fio_matrix, gaussian, invert_iphi_matrix, rel_l2, ChainFactor, QuantGrid,
};
use crate::symbols::{check_order, SampleGrid, SgSymbol};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::sync::Arc;

pub fn run(sub: Subcommand, cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    match sub {
        Subcommand::Verify => verify(cfg),
        Subcommand::Eikonal => eikonal(cfg),
        Subcommand::Multiprod => multiprod(cfg),
        Subcommand::Compose => compose(cfg),
        Subcommand::Invert => invert(cfg),
        Subcommand::Hyperbolic => hyperbolic(cfg),
    }
}

fn sample_grid(cfg: &ExperimentConfig) -> Result<SampleGrid, CliError> {
    let g = &cfg.grid;
    Ok(SampleGrid::new(g.lx, g.lxi, g.nx, g.nxi)?)
}

fn quant_grid(cfg: &ExperimentConfig) -> Result<QuantGrid, CliError> {
    Ok(QuantGrid::new(cfg.quant.n, cfg.quant.l)?)
}

fn required<'a, T>(v: &'a Option<T>, key: &str, sub: Subcommand) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Config(format!("{key}: required by `{sub}`")))
}

fn symbol(spec: &SymbolSpec, orders: (f64, f64)) -> Result<SgSymbol, CliError> {
    spec.build(orders).map_err(CliError::Config)
}

/// An expression in `t, s, x, xi` with no declared order.
fn plain(text: &str, key: &str) -> Result<SgSymbol, CliError> {
    SgSymbol::parse(text, 0.0, 0.0).map_err(|e| CliError::Config(format!("{key}: {text:?}: {e}")))
}

/// Nodes on which eikonal phases are solved.
enum Nodes<'a> {
    Sample(&'a SampleGrid),
    Quant(&'a QuantGrid),
}

fn build_phase(spec: &PhaseSpec, key: &str, cfg: &ExperimentConfig, nodes: Nodes) -> Result<PhaseFunction, CliError> {
    let parse = |text: &str| -> Result<PhaseFunction, CliError> {
        if text == "identity" {
            return Ok(PhaseFunction::identity());
        }
        PhaseFunction::parse(text).map_err(|e| CliError::Config(format!("{key}: {text:?}: {e}")))
    };
    let obj = match spec {
        PhaseSpec::Text(t) => return parse(t),
        PhaseSpec::Full(o) => o,
    };
    match (&obj.expr, &obj.eikonal) {
        (Some(t), None) => parse(t),
        (None, Some(a)) => {
            let a = Arc::new(symbol(a, (1.0, 1.0))?);
            let tol = &cfg.tolerances;
            let p = match nodes {
                Nodes::Sample(g) => {
                    let opts = ShootOptions { h: tol.eikonal_h, tol: tol.shoot, ..Default::default() };
                    EikonalPhase::solve(&a, obj.t, obj.s, &g.xs(), &g.xis(), &opts)?
                }
                Nodes::Quant(g) => {
                    let opts = SweepOptions { h: tol.sweep_h, refine: tol.sweep_refine };
                    solve_eikonal_family(&a, obj.s, &[obj.t], &g.xs(), &g.xis(), &opts)?.remove(0)
                }
            };
            Ok(PhaseFunction::new(p))
        }
        _ => Err(CliError::Config(format!("{key}: give exactly one of `expr` and `eikonal`"))),
    }
}

/// Explicit `tau` when given, else the certified regularity constant.
fn phase_tau(spec: &PhaseSpec, phi: &PhaseFunction, g: &SampleGrid, ell: usize) -> Result<f64, CliError> {
    match spec.tau() {
        Some(t) => Ok(t),
        None => Ok(certify_regular(phi, g, ell)?.tau),
    }
}

fn j_heatmap(title: &str, phi: &PhaseFunction, xs: &[f64], xis: &[f64]) -> Result<String, CliError> {
    let mut vals = Vec::with_capacity(xs.len() * xis.len());
    for &x in xs {
        for &xi in xis {
            vals.push(phi.value(x, xi)? - x * xi);
        }
    }
    Ok(heatmap(title, "x", "xi", xs, xis, &vals))
}

fn finish(sub: Subcommand, cfg: &ExperimentConfig, checks: Vec<Check>, measured: serde_json::Value, tables: Vec<Table>, plots: Vec<(String, String)>) -> Artifacts {
    Artifacts { report: Report::new(sub, checks, measured), tables, plots: if cfg.plots { plots } else { Vec::new() } }
}

fn verify(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let sub = Subcommand::Verify;
    let g = sample_grid(cfg)?;
    let spec = required(&cfg.phase, "phase", sub)?;
    let phi = build_phase(spec, "phase", cfg, Nodes::Sample(&g))?;
    let cert = certify_regular(&phi, &g, cfg.ell)?;
    let order = 2 + cfg.ell;
    let sups = j_weighted_sups(&phi, order, &g)?;
    let mut table = Table::new("j_sups.csv", &["beta", "alpha", "weighted_sup"]);
    for (beta, row) in sups.iter().enumerate() {
        for (alpha, &v) in row.iter().enumerate().take(order - beta + 1) {
            table.push(vec![beta as f64, alpha as f64, v]);
        }
    }
    let mut checks = vec![Check::holds("phase_class", cert.class != crate::phase::PhaseClass::Fail)];
    let mut measured = json!({ "phase": phi.describe(), "certificate": cert, "grid": g });
    if let Some(a) = &cfg.symbol {
        let a = symbol(a, (0.0, 0.0))?;
        let (m, mu) = a.order();
        let rep = check_order(&a, m, mu, cfg.ell, &g, cfg.tolerances.order_bound)?;
        checks.push(Check::le("symbol_order", rep.seminorm, rep.bound));
        measured["symbol"] = json!({ "source": a.source(), "order": [m, mu], "report": rep });
    }
    let plots = vec![("j.svg".to_string(), j_heatmap("J = phi - x xi", &phi, &g.xs(), &g.xis())?)];
    Ok(finish(sub, cfg, checks, measured, vec![table], plots))
}

fn eikonal(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let sub = Subcommand::Eikonal;
    let g = sample_grid(cfg)?;
    let tol = &cfg.tolerances;
    let a = Arc::new(symbol(required(&cfg.symbol, "symbol", sub)?, (1.0, 1.0))?);
    let (t, s) = (cfg.time.t, cfg.time.s);
    let p = solve_eikonal(&a, t, s, &g, tol.eikonal_h, tol.shoot)?;
    let (xs, xis) = (g.xs(), g.xis());
    let mut table = Table::new("phase.csv", &["t", "s", "x", "xi", "phi", "phix", "phixi"]);
    for (i, &x) in xs.iter().enumerate() {
        for (j, &xi) in xis.iter().enumerate() {
            let (v, vx, vxi) = p.node(i, j);
            table.push(vec![t, s, x, xi, v, vx, vxi]);
        }
    }
    let mut checks = Vec::new();
    let residual_limit = 100.0 * tol.shoot * g.lx.max(1.0);
    checks.push(Check::le("shooting_residual", p.max_residual, residual_limit));
    let fd = tol.fd_step;
    let forward = if t - fd >= s { Some(p.verify_forward(fd)?) } else { None };
    if let Some(r) = forward {
        checks.push(Check::le("forward_residual", r, tol.eikonal_residual));
    }
    let backward = if s - fd >= 0.0 && s + fd <= t { Some(p.verify_backward(fd)?) } else { None };
    if let Some(r) = backward {
        checks.push(Check::le("backward_residual", r, tol.eikonal_residual));
    }
    let mut measured = json!({
        "symbol": a.source(),
        "t": t,
        "s": s,
        "grid": g,
        "max_shooting_residual": p.max_residual,
        "forward_residual": forward,
        "backward_residual": backward,
    });
    if let Some(text) = &cfg.exact {
        let ex = plain(text, "exact")?;
        let mut err = [0.0f64; 3];
        for (i, &x) in xs.iter().enumerate() {
            for (j, &xi) in xis.iter().enumerate() {
                let (v, vx, vxi) = p.node(i, j);
                err[0] = err[0].max((v - ex.eval(t, s, x, xi)?).abs());
                err[1] = err[1].max((vx - ex.dxx(1, 0, t, s, x, xi)?).abs());
                err[2] = err[2].max((vxi - ex.dxx(0, 1, t, s, x, xi)?).abs());
            }
        }
        checks.push(Check::le("closed_form_phi", err[0], tol.closed_form));
        checks.push(Check::le("closed_form_phix", err[1], tol.closed_form));
        checks.push(Check::le("closed_form_phixi", err[2], tol.closed_form));
        measured["closed_form"] = json!({ "exact": text, "phi": err[0], "phix": err[1], "phixi": err[2] });
    }
    let phi = PhaseFunction::new(p);
    let cert = certify_regular(&phi, &g, cfg.ell)?;
    checks.push(Check::holds("phase_class", cert.class != crate::phase::PhaseClass::Fail));
    measured["certificate"] = json!(cert);
    let mut tables = vec![table];
    let mut plots = vec![("j.svg".to_string(), j_heatmap("J = phi - x xi", &phi, &xs, &xis)?)];
    if !cfg.time.sweep.is_empty() {
        let mut sweep = Table::new("j_growth.csv", &["t_minus_s", "j_norm0", "ratio"]);
        let mut pts = Vec::new();
        for &d in &cfg.time.sweep {
            let q = solve_eikonal(&a, s + d, s, &g, tol.eikonal_h, tol.shoot)?;
            let jn = j_seminorm(&PhaseFunction::new(q), 0, &g)?.norm_ell;
            pts.push((d, jn));
        }
        let c = pts.iter().map(|(d, j)| d * j).sum::<f64>() / pts.iter().map(|(d, _)| d * d).sum::<f64>();
        let spread = pts.iter().map(|(d, j)| (j / d / c - 1.0).abs()).fold(0.0, f64::max);
        for &(d, j) in &pts {
            sweep.push(vec![d, j, j / d]);
        }
        checks.push(Check::le("linear_growth_spread", spread, tol.linear_fit));
        measured["j_growth"] = json!({ "c": c, "spread": spread, "points": pts });
        plots.push((
            "j_growth.svg".to_string(),
            line_plot("||J||_0 against t - s", "t - s", "||J||_0", &[Series { label: format!("c = {c:.4}"), points: pts }], false),
        ));
        tables.push(sweep);
    }
    Ok(finish(sub, cfg, checks, measured, tables, plots))
}

fn multiprod(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let sub = Subcommand::Multiprod;
    let g = sample_grid(cfg)?;
    let tol = &cfg.tolerances;
    if cfg.phases.len() < 2 || cfg.phases.len() > 17 {
        return Err(CliError::Config(format!("phases: need 2 to 17 phases (M <= 16), got {}", cfg.phases.len())));
    }
    let mut phases = Vec::new();
    let mut taus = Vec::new();
    for (k, spec) in cfg.phases.iter().enumerate() {
        let phi = build_phase(spec, &format!("phases[{k}]"), cfg, Nodes::Sample(&g))?;
        taus.push(phase_tau(spec, &phi, &g, cfg.ell)?);
        phases.push(phi);
    }
    let chain = PhaseChain::new(phases, taus)?;
    let (xs, xis) = (g.xs(), g.xis());
    let mp = MultiProductPhase::solve(&chain, &xs, &xis, tol.fixed_point, tol.max_iter)?;
    let mut table = Table::new("product.csv", &["x", "xi", "phi", "phix", "phixi", "iterations", "residual"]);
    for i in 0..xs.len() {
        for j in 0..xis.len() {
            let p = mp.point(i, j);
            table.push(vec![p.x, p.xi, p.value, p.phix, p.phixi, p.iterations as f64, p.residual]);
        }
    }
    let coarse = SampleGrid::new(g.lx, g.lxi, cfg.grid.coarse, cfg.grid.coarse)?;
    let st = verify_structure(&mp, &coarse)?;
    let mut checks = vec![
        Check::le("derivative_relation_x", st.deriv_x, tol.derivative_relation),
        Check::le("derivative_relation_xi", st.deriv_xi, tol.derivative_relation),
        Check::le("increment_bounds", st.bounds.increments, 1.0),
        Check::le("partial_sum_bounds", st.bounds.partial_sums, 1.0),
        Check::le("contraction", st.max_contraction, st.contraction_bound),
        Check::holds("product_regular", st.k_tau0_below_one),
    ];
    if let Some(a) = st.associativity {
        checks.push(Check::le("associativity", a, tol.associativity));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut restart = 0.0f64;
    for _ in 0..tol.restarts {
        let (i, j) = (rng.random_range(0..xs.len()), rng.random_range(0..xis.len()));
        let base = mp.point(i, j);
        let (x, xi) = (xs[i], xis[j]);
        let start = random_start(&mut rng, chain.m(), x, xi);
        let c = solve_critical_from(&chain, x, xi, start, tol.fixed_point, tol.max_iter)?;
        for k in 0..chain.m() {
            restart = restart.max((c.y[k] - base.y[k]).abs() / (1.0 + x.abs()));
            restart = restart.max((c.n[k] - base.n[k]).abs() / (1.0 + xi.abs()));
        }
    }
    if tol.restarts > 0 {
        checks.push(Check::le("restart_uniqueness", restart, tol.restart_factor * tol.fixed_point));
    }
    let mut measured = json!({
        "m": chain.m(),
        "taus": chain.taus(),
        "tau0": chain.tau0(),
        "grid": g,
        "structure": st,
        "restart_deviation": restart,
        "max_iterations": mp.points().iter().map(|p| p.iterations).max(),
    });
    if let Some(spec) = &cfg.expected {
        let e = build_phase(spec, "expected", cfg, Nodes::Sample(&g))?;
        let mut worst = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            for (j, &xi) in xis.iter().enumerate() {
                worst = worst.max((mp.point(i, j).value - e.value(x, xi)?).abs());
            }
        }
        checks.push(Check::le("expected_product", worst, tol.product_match));
        measured["expected_product"] = json!(worst);
    }
    let phi = mp.into_phase();
    let plots = vec![("product_j.svg".to_string(), j_heatmap("J of the product", &phi, &xs, &xis)?)];
    Ok(finish(sub, cfg, checks, measured, vec![table], plots))
}

fn compose(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let sub = Subcommand::Compose;
    let g = sample_grid(cfg)?;
    let q = quant_grid(cfg)?;
    let tol = &cfg.tolerances;
    let n = cfg.phases.len();
    if !(2..=17).contains(&n) {
        return Err(CliError::Config(format!("phases: need 2 to 17 phases, got {n}")));
    }
    if !cfg.amplitudes.is_empty() && cfg.amplitudes.len() != n {
        return Err(CliError::Config(format!("amplitudes: {} given for {n} phases", cfg.amplitudes.len())));
    }
    let basis = band_basis(&q, &cfg.basis);
    let mut factors = Vec::new();
    for (k, spec) in cfg.phases.iter().enumerate() {
        let phi = build_phase(spec, &format!("phases[{k}]"), cfg, Nodes::Quant(&q))?;
        let tau = phase_tau(spec, &phi, &g, cfg.ell)?;
        let a = match cfg.amplitudes.get(k) {
            Some(s) => symbol(s, (0.0, 0.0))?,
            None => SgSymbol::builtin("one").expect("builtin"),
        };
        factors.push(ChainFactor { a, phi, tau });
    }
    let mut checks = Vec::new();
    let mut measured = json!({ "n": q.n, "l": q.l, "xi_max": q.xi_max(), "taus": factors.iter().map(|f| f.tau).collect::<Vec<_>>() });
    let mut tables = Vec::new();
    let mut plots = Vec::new();
    if n == 2 {
        let chain = PhaseChain::new(factors.iter().map(|f| f.phi.clone()).collect(), factors.iter().map(|f| f.tau).collect())?;
        let (_, rep) = compose_extract_symbol(&q, &chain)?;
        checks.push(Check::le("symbol_sup", rep.sup_p, tol.symbol_bound));
        checks.push(Check::le("symbol_quotient_x", rep.dq_x, tol.symbol_bound));
        checks.push(Check::le("symbol_quotient_xi", rep.dq_xi, tol.symbol_bound));
        if cfg.expect_unit_symbol {
            checks.push(Check::le("unit_symbol", rep.sup_p_minus_one, tol.unit_symbol));
        }
        let sym = &rep.symbol;
        let mut t = Table::new("symbol.csv", &["x", "xi", "re", "im"]);
        let mut mags = Vec::new();
        for a in 0..sym.xs.len() {
            for b in 0..sym.xis.len() {
                let v = sym.at(a, b);
                t.push(vec![sym.xs[a], sym.xis[b], v.re, v.im]);
                mags.push(v.norm());
            }
        }
        plots.push(("symbol.svg".to_string(), heatmap("|p| on the probe", "x", "xi", &sym.xs, &sym.xis, &mags)));
        tables.push(t);
        measured["symbol"] = json!({
            "sup_p": rep.sup_p,
            "sup_p_minus_one": rep.sup_p_minus_one,
            "dq_x": rep.dq_x,
            "dq_xi": rep.dq_xi,
            "probed_nodes": rep.probed_nodes,
        });
    }
    let (_, chain) = compose_chain(&q, &factors, &basis)?;
    checks.push(Check::le("factorization_residual", chain.factorization_residual, tol.factorization));
    checks.push(Check::le("seminorm_ratio_l0", chain.ratio[0], tol.seminorm_c[0]));
    checks.push(Check::le("seminorm_ratio_l1", chain.ratio[1], tol.seminorm_c[1]));
    measured["chain"] = json!(chain);
    Ok(finish(sub, cfg, checks, measured, tables, plots))
}

fn invert(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let sub = Subcommand::Invert;
    let q = quant_grid(cfg)?;
    let spec = required(&cfg.phase, "phase", sub)?;
    let phi = build_phase(spec, "phase", cfg, Nodes::Quant(&q))?;
    let basis = band_basis(&q, &cfg.basis);
    let m1 = fio_matrix(&q, &phi)?;
    let inv = invert_iphi_matrix(&m1.m, &basis)?;
    let checks = vec![Check::le("inverse_residual", inv.residual, cfg.tolerances.inverse)];
    let u = gaussian(&q, 0.0, 1.0, 0.0);
    let v = linalg::matmul(&inv.q_star, &m1.m) * &u;
    let mut t = Table::new("roundtrip.csv", &["x", "u_re", "u_im", "v_re", "v_im"]);
    for i in 0..q.n {
        t.push(vec![q.x(i), u[i].re, u[i].im, v[i].re, v[i].im]);
    }
    let roundtrip = rel_l2(&v, &u);
    let measured = json!({
        "phase": phi.describe(),
        "n": q.n,
        "l": q.l,
        "basis_rank": basis.q.ncols(),
        "residual": inv.residual,
        "left_residual": inv.left_residual,
        "a0_norm": inv.a0_norm,
        "gaussian_roundtrip": roundtrip,
    });
    let series = [
        Series { label: "|u|".into(), points: (0..q.n).map(|i| (q.x(i), u[i].norm())).collect() },
        Series { label: "|Q* I u|".into(), points: (0..q.n).map(|i| (q.x(i), v[i].norm())).collect() },
    ];
    let plots = vec![("roundtrip.svg".to_string(), line_plot("Gaussian through Q* I_phi", "x", "modulus", &series, false))];
    Ok(finish(sub, cfg, checks, measured, vec![t], plots))
}

fn build_system(spec: &SystemSpec, t0: f64) -> Result<HyperbolicSystem, CliError> {
    let m = spec.lambdas.len();
    let eps = spec.eps;
    let lambdas = spec.lambdas.iter().map(|s| symbol(s, (eps, 1.0))).collect::<Result<Vec<_>, _>>()?;
    let r = if spec.coupling.is_empty() {
        vec![vec![None; m]; m]
    } else {
        spec.coupling
            .iter()
            .map(|row| row.iter().map(|e| e.as_ref().map(|s| symbol(s, (eps - 1.0, 0.0))).transpose()).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(HyperbolicSystem::new(lambdas, r, eps, t0)?)
}

/// Stack per-component expressions in `t, x` at time `t`.
fn stacked(q: &QuantGrid, exprs: &[SgSymbol], t: f64) -> Result<CVec, CliError> {
    let mut out = CVec::zeros(exprs.len() * q.n);
    for (c, e) in exprs.iter().enumerate() {
        for i in 0..q.n {
            out[c * q.n + i] = Complex64::new(e.eval(t, 0.0, q.x(i), 0.0)?, 0.0);
        }
    }
    Ok(out)
}

fn per_component(exprs: &[String], m: usize, key: &str) -> Result<Vec<SgSymbol>, CliError> {
    if exprs.len() != m {
        return Err(CliError::Config(format!("system.{key}: need {m} expressions, got {}", exprs.len())));
    }
    exprs.iter().enumerate().map(|(c, e)| plain(e, &format!("system.{key}[{c}]"))).collect()
}

fn hyperbolic(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let sub = Subcommand::Hyperbolic;
    let spec = required(&cfg.system, "system", sub)?;
    let tol = &cfg.tolerances;
    let q = quant_grid(cfg)?;
    let sys = build_system(spec, cfg.time.t0)?;
    let m = sys.m();
    let opts = HypOptions {
        k: cfg.time.k,
        n_cap: spec.picard_cap,
        tol: tol.picard,
        eikonal_h: spec.eikonal_h,
        eikonal_refine: spec.eikonal_refine,
        basis: cfg.basis.clone(),
    };
    let fs = FundamentalSolution::build(&sys, &q, &opts)?;
    let rep = fs.report();
    let mut checks = vec![
        Check::holds("identity_bit_exact", rep.identity_bit_exact),
        Check::holds("picard_converged", rep.converged),
        Check::holds("factorial_envelope_slope", rep.envelope.slope_ok),
        Check::le("telescoping_residual", rep.telescoping_residual, tol.telescoping),
        Check::holds("residual_decreasing", rep.residual_decreasing),
        Check::le("residual_vs_last_term", rep.residual_vs_last_term, tol.last_term),
        Check::le("semigroup_residual", rep.semigroup_residual, tol.semigroup),
    ];
    let initial = per_component(&spec.initial, m, "initial")?;
    let g0 = stacked(&q, &initial, 0.0)?;
    let forcing_exprs = if spec.forcing.is_empty() { None } else { Some(per_component(&spec.forcing, m, "forcing")?) };
    // evaluation errors were ruled out on the grid before the solve
    if let Some(f) = &forcing_exprs {
        for &t in &fs.times {
            stacked(&q, f, t)?;
        }
    }
    let qr = &q;
    let forcing_fn = forcing_exprs.as_ref().map(|f| move |t: f64| stacked(qr, f, t).expect("forcing evaluated on the grid"));
    let forcing: Option<&(dyn Fn(f64) -> CVec + Sync)> = forcing_fn.as_ref().map(|f| f as &(dyn Fn(f64) -> CVec + Sync));
    let ws = solve_cauchy(&fs, &g0, forcing)?;
    let mut measured = json!({
        "m": m,
        "eps": sys.eps(),
        "t0": fs.t0,
        "k": fs.k(),
        "n": q.n,
        "l": q.l,
        "autonomous": fs.autonomous,
        "picard": rep,
    });
    if !spec.exact.is_empty() {
        let exact = per_component(&spec.exact, m, "exact")?;
        let mut errs = Vec::with_capacity(ws.len());
        for (a, &t) in fs.times.iter().enumerate() {
            errs.push(rel_l2(&ws[a], &stacked(&q, &exact, t)?));
        }
        let worst = errs.iter().copied().fold(0.0, f64::max);
        checks.push(Check::le("exact_solution", worst, tol.exact));
        measured["exact_errors"] = json!(errs);
    }
    if spec.reference {
        let r = reference_solve(&sys, &q, &g0, forcing, &fs.times, spec.reference_steps)?;
        let errs: Vec<f64> = ws.iter().zip(&r.states).map(|(w, v)| rel_l2(w, v)).collect();
        let worst = errs.iter().copied().fold(0.0, f64::max);
        checks.push(Check::le("reference_solution", worst, tol.reference));
        measured["reference"] = json!({ "steps": r.steps, "errors": errs });
    }
    if let Some(wp) = &spec.wellposedness {
        let w = wellposedness(&sys, &fs, wp.r, wp.ell, wp.samples, cfg.seed, tol.wellposed_bound)?;
        checks.push(Check::le("wellposedness_ratio", w.max_ratio, w.bound));
        measured["wellposedness"] = json!(w);
    }
    let mut sol = Table::new("solution.csv", &["t", "component", "x", "re", "im"]);
    for (a, &t) in fs.times.iter().enumerate() {
        for c in 0..m {
            for i in 0..q.n {
                let v = ws[a][c * q.n + i];
                sol.push(vec![t, c as f64, q.x(i), v.re, v.im]);
            }
        }
    }
    let mut orders = Table::new("orders.csv", &["nu", "norm"]);
    for (nu, &v) in rep.order_norms.iter().enumerate() {
        orders.push(vec![(nu + 1) as f64, v]);
    }
    let pts: Vec<(f64, f64)> = rep.order_norms.iter().enumerate().map(|(nu, &v)| ((nu + 1) as f64, v)).collect();
    let xs = q.xs();
    let mut mags = Vec::with_capacity(fs.times.len() * q.n);
    for w in &ws {
        mags.extend((0..q.n).map(|i| w[i].norm()));
    }
    let plots = vec![
        ("orders.svg".to_string(), line_plot("Picard order norms", "nu", "||W_nu||", &[Series { label: "band-limited norm".into(), points: pts }], true)),
        ("solution.svg".to_string(), heatmap("|W| of component 1", "t", "x", &fs.times, &xs, &mags)),
    ];
    Ok(finish(sub, cfg, checks, measured, vec![sol, orders], plots))
}
