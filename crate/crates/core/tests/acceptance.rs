//! Acceptance criteria. Each criterion prints one PASS or FAIL line with the
//! measured values; the process exits non-zero when any criterion fails.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgfio::eikonal::{solve_eikonal, solve_eikonal_family, EikonalPhase, ShootOptions, SweepOptions};
use sgfio::hyperbolic::{reference_solve, solve_cauchy, FundamentalSolution, HypOptions, HyperbolicSystem};
use sgfio::linalg::{self, CVec};
use sgfio::multiproduct::{det_bound_check, random_start, solve_critical, solve_critical_from, verify_structure, MultiProductPhase, PhaseChain};
use sgfio::phase::{certify_regular, j_seminorm, PhaseFunction};
use sgfio::quantize::*;
use sgfio::symbols::{ang, SampleGrid, SgSymbol};
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::sync::Arc;
use std::time::Instant;

type Res = Result<(bool, String), String>;
type Exact = Box<dyn Fn(f64, f64) -> [f64; 3]>;
type Criterion = (&'static str, fn() -> Res);

const PERTURBED: &str = "ang(xi)*(1 + 0.1*sin(x))";

fn sym(text: &str, m: f64, mu: f64) -> SgSymbol {
    SgSymbol::parse(text, m, mu).unwrap_or_else(|e| panic!("{text}: {e}"))
}

fn arc(text: &str, m: f64, mu: f64) -> Arc<SgSymbol> {
    Arc::new(sym(text, m, mu))
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn eik(a: &Arc<SgSymbol>, t: f64, s: f64, g: &SampleGrid) -> Result<PhaseFunction, String> {
    let p = EikonalPhase::solve(a, t, s, &g.xs(), &g.xis(), &ShootOptions::default()).map_err(err)?;
    PhaseFunction::new(p).certified(g, 0).map_err(err)
}

fn quant_eikonal(g: &QuantGrid, a: &str, times: &[f64]) -> Result<Vec<EikonalPhase>, String> {
    solve_eikonal_family(&arc(a, 0.0, 1.0), 0.0, times, &g.xs(), &g.xis(), &SweepOptions { h: 1e-3, refine: 2 }).map_err(err)
}

fn grid256() -> QuantGrid {
    QuantGrid::new(256, 12.0).unwrap()
}

fn sup_abs(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn random_corpus(g: &QuantGrid, basis: &BandBasis, rng: &mut ChaCha8Rng) -> CVec {
    let k = basis.raw.ncols();
    let c = CVec::from_iterator(k, (0..k).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))));
    let u = &basis.raw * c;
    debug_assert_eq!(u.len(), g.n);
    u
}

fn inner(g: &QuantGrid, u: &CVec, v: &CVec) -> Complex64 {
    u.iter().zip(v.iter()).map(|(a, b)| a * b.conj()).sum::<Complex64>() * g.dx()
}

// 1
fn eikonal_closed_forms() -> Res {
    let g = SampleGrid::square(4.0, 17);
    let tau = 0.1;
    let cases: [(&str, f64, f64, Exact); 3] = [
        ("xi", 0.0, 1.0, Box::new(move |x, xi| [x * xi + tau * xi, xi, x + tau])),
        ("x*xi", 1.0, 1.0, Box::new(move |x, xi| [x * xi * tau.exp(), xi * tau.exp(), x * tau.exp()])),
        ("ang(xi)", 0.0, 1.0, Box::new(move |x, xi| [x * xi + tau * ang(xi), xi, x + tau * xi / ang(xi)])),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (text, m, mu, exact) in cases {
        let start = Instant::now();
        let p = solve_eikonal(&arc(text, m, mu), tau, 0.0, &g, 1e-3, 1e-12).map_err(err)?;
        let secs = start.elapsed().as_secs_f64();
        let mut worst = 0.0f64;
        for i in 0..g.nx {
            for j in 0..g.nxi {
                let (phi, px, pxi) = p.node(i, j);
                let e = exact(g.x(i), g.xi(j));
                worst = worst.max((phi - e[0]).abs()).max((px - e[1]).abs()).max((pxi - e[2]).abs());
            }
        }
        pass &= worst <= 1e-6 && secs < 30.0;
        parts.push(format!("a={text}: err {worst:.2e} in {secs:.2} s"));
    }
    Ok((pass, format!("{} (tol 1e-6, limit 30 s)", parts.join("; "))))
}

// 2
fn j_linear_growth_and_backward() -> Res {
    let g = SampleGrid::square(4.0, 17);
    let a = arc(PERTURBED, 0.0, 1.0);
    let mut pts = Vec::new();
    for d in [0.0125, 0.025, 0.05, 0.1] {
        let p = solve_eikonal(&a, d, 0.0, &g, 1e-3, 1e-12).map_err(err)?;
        pts.push((d, j_seminorm(&PhaseFunction::new(p), 0, &g).map_err(err)?.norm_ell));
    }
    let c = pts.iter().map(|(d, j)| d * j).sum::<f64>() / pts.iter().map(|(d, _)| d * d).sum::<f64>();
    let spread = pts.iter().map(|(d, j)| (j / d / c - 1.0).abs()).fold(0.0, f64::max);
    let p = solve_eikonal(&a, 0.1, 0.05, &g, 1e-3, 1e-12).map_err(err)?;
    let back = p.verify_backward(1e-3).map_err(err)?;
    let pass = spread <= 0.2 && back <= 1e-4;
    Ok((pass, format!("c = {c:.4}, spread {spread:.2e} (tol 0.2); backward residual {back:.2e} (tol 1e-4)")))
}

fn product_vs(chain: &PhaseChain, g: &SampleGrid, want: impl Fn(usize, usize) -> f64) -> Result<f64, String> {
    let mp = MultiProductPhase::solve(chain, &g.xs(), &g.xis(), 1e-13, 200).map_err(err)?;
    let mut worst = 0.0f64;
    for i in 0..g.nx {
        for j in 0..g.nxi {
            worst = worst.max((mp.point(i, j).value - want(i, j)).abs());
        }
    }
    Ok(worst)
}

// 3
fn identity_is_neutral() -> Res {
    let g = SampleGrid::square(4.0, 17);
    let id = PhaseFunction::identity();
    let expr = PhaseFunction::parse("x*xi + 0.05*sin(x)*ang(xi)").map_err(err)?;
    let raw = EikonalPhase::solve(&arc(PERTURBED, 0.0, 1.0), 0.05, 0.0, &g.xs(), &g.xis(), &ShootOptions::default()).map_err(err)?;
    let nodes: Vec<f64> = raw.phi_grid().to_vec();
    let eikonal = PhaseFunction::new(raw);
    let mut worst = 0.0f64;
    for (phi, want) in [(expr.clone(), None), (eikonal, Some(nodes))] {
        let tau = certify_regular(&phi, &g, 0).map_err(err)?.tau;
        let value = |i: usize, j: usize| match &want {
            Some(n) => n[i * g.nxi + j],
            None => phi.value(g.x(i), g.xi(j)).unwrap(),
        };
        let right = PhaseChain::new(vec![phi.clone(), id.clone()], vec![tau, 0.0]).map_err(err)?;
        let left = PhaseChain::new(vec![id.clone(), phi.clone()], vec![0.0, tau]).map_err(err)?;
        worst = worst.max(product_vs(&right, &g, value)?).max(product_vs(&left, &g, value)?);
    }
    Ok((worst <= 1e-8, format!("max |phi#phi0 - phi|, |phi0#phi - phi| = {worst:.2e} (tol 1e-8)")))
}

// 4
fn group_law() -> Res {
    let g = SampleGrid::square(4.0, 17);
    let (r, s, t) = (0.0, 0.05, 0.1);
    let mut parts = Vec::new();
    let mut pass = true;
    for text in ["ang(xi)", PERTURBED] {
        let a = arc(text, 0.0, 1.0);
        let chain = PhaseChain::from_certified(vec![eik(&a, t, s, &g)?, eik(&a, s, r, &g)?]).map_err(err)?;
        let direct = solve_eikonal(&a, t, r, &g, 1e-3, 1e-12).map_err(err)?;
        let worst = product_vs(&chain, &g, |i, j| direct.node(i, j).0)?;
        pass &= worst <= 1e-5;
        parts.push(format!("a={text}: {worst:.2e}"));
    }
    Ok((pass, format!("sup |phi(t,s)#phi(s,r) - phi(t,r)|: {} (tol 1e-5)", parts.join("; "))))
}

// 5
fn critical_point_bounds() -> Res {
    let g = SampleGrid::square(4.0, 9);
    let a = arc(PERTURBED, 0.0, 1.0);
    let chain = PhaseChain::from_certified(vec![eik(&a, 0.15, 0.1, &g)?, eik(&a, 0.1, 0.05, &g)?, eik(&a, 0.05, 0.0, &g)?]).map_err(err)?;
    let tol = 1e-12;
    let mp = MultiProductPhase::solve(&chain, &g.xs(), &g.xis(), tol, 200).map_err(err)?;
    let held = mp
        .points()
        .iter()
        .filter(|c| {
            let b = c.bound_ratios(&chain);
            b.increments <= 1.0 && b.partial_sums <= 1.0
        })
        .count();
    let total = mp.points().len();
    let contraction = mp.max_contraction();
    let limit = 3.0 * chain.tau0() + 0.05;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut dev = 0.0f64;
    for _ in 0..10 {
        let (x, xi) = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
        let base = solve_critical(&chain, x, xi, tol, 200).map_err(err)?;
        for _ in 0..3 {
            let c = solve_critical_from(&chain, x, xi, random_start(&mut rng, chain.m(), x, xi), tol, 200).map_err(err)?;
            for k in 0..chain.m() {
                dev = dev.max((c.y[k] - base.y[k]).abs() / (1.0 + x.abs()));
                dev = dev.max((c.n[k] - base.n[k]).abs() / (1.0 + xi.abs()));
            }
        }
    }
    let pass = held == total && contraction <= limit && dev <= 10.0 * tol;
    Ok((
        pass,
        format!(
            "bounds at {held}/{total} nodes; contraction {contraction:.3} (limit {limit:.3}); restart deviation {dev:.2e} (limit {:.0e})",
            10.0 * tol
        ),
    ))
}

// 6
fn structure_of_four_phase_chain() -> Res {
    let g = SampleGrid::square(4.0, 9);
    let a = arc(PERTURBED, 0.0, 1.0);
    let times = [0.16, 0.12, 0.08, 0.04, 0.0];
    let phases = times.windows(2).map(|w| eik(&a, w[0], w[1], &g)).collect::<Result<Vec<_>, _>>()?;
    let chain = PhaseChain::from_certified(phases).map_err(err)?;
    let mp = MultiProductPhase::solve(&chain, &g.xs(), &g.xis(), 1e-12, 200).map_err(err)?;
    let rep = verify_structure(&mp, &SampleGrid::square(4.0, 5)).map_err(err)?;
    let assoc = rep.associativity.unwrap_or(f64::INFINITY);
    let pass = rep.deriv_x <= 1e-5 && rep.deriv_xi <= 1e-5 && assoc <= 1e-5;
    Ok((
        pass,
        format!("M = {}: derivative relations {:.2e} / {:.2e}, associativity {assoc:.2e} (tol 1e-5)", chain.m(), rep.deriv_x, rep.deriv_xi),
    ))
}

// 7
fn det_bounds() -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c0 = 0.7;
    let mut held = 0;
    let mut worst_margin = f64::INFINITY;
    for k in 0..1000 {
        let l = 1 + k % 6;
        let mut a = DMatrix::from_fn(l, l, |_, _| rng.random_range(-1.0..1.0));
        let norm = (0..l).map(|j| a.column(j).iter().map(|v: &f64| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        a *= rng.random_range(0.0..c0) / norm;
        let r = det_bound_check(&a, c0).map_err(err)?;
        // independent determinant from the eigenvalues of I - A
        let ev = (DMatrix::identity(l, l) - &a).complex_eigenvalues();
        let det = ev.iter().fold(Complex64::new(1.0, 0.0), |acc, z| acc * Complex64::new(z.re, z.im)).re;
        let agree = (det - r.det).abs() <= 1e-10 * det.abs().max(1.0);
        if r.pass && agree && det >= r.lo && det <= r.hi {
            held += 1;
        }
        worst_margin = worst_margin.min(det - r.lo).min(r.hi - det);
    }
    Ok((held == 1000, format!("{held}/1000 matrices within bounds; smallest margin {worst_margin:.3e}")))
}

// 8
fn quantization_identities() -> Res {
    let g = grid256();
    let n = g.n;
    let one = sym("1", 0.0, 0.0);
    let id = type1_matrix(&g, &one, &PhaseFunction::identity()).map_err(err)?;
    let id_err = (&id.m - linalg::identity(n)).iter().map(|z| z.norm()).fold(0.0, f64::max);

    let c = 0.3;
    let tr = type1_matrix(&g, &one, &PhaseFunction::translation(c)).map_err(err)?;
    let shifted = g.sample(|x| Complex64::new((-0.5 * (x + c) * (x + c)).exp(), 0.0));
    let tr_err = sup_abs(&(tr.apply(&gaussian(&g, 0.0, 1.0, 0.0)) - shifted));

    let basis = band_basis(&g, &BasisSpec::default());
    let a = sym("ang(xi)*(1 + 0.2*x/ang(x))", 0.0, 1.0);
    let phi = PhaseFunction::parse("x*xi + 0.03*sin(x)*ang(xi)").map_err(err)?;
    let m1 = type1_matrix(&g, &a, &phi).map_err(err)?;
    let m2 = type2_matrix(&g, &a, &phi).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut adj = 0.0f64;
    let mut planch = 0.0f64;
    for _ in 0..5 {
        let u = random_corpus(&g, &basis, &mut rng);
        let v = random_corpus(&g, &basis, &mut rng);
        let lhs = inner(&g, &m1.apply(&u), &v);
        let rhs = inner(&g, &u, &m2.apply(&v));
        adj = adj.max((lhs - rhs).norm() / lhs.norm().max(1.0));
        let uh = fourier(&g, &u).map_err(err)?;
        let lu = l2_norm(&g, &u);
        let lh = (g.dxi() * uh.iter().map(|z| z.norm_sqr()).sum::<f64>() / (2.0 * PI)).sqrt();
        planch = planch.max((lu - lh).abs() / lu);
    }
    let sob = (sobolev_norm(&g, &gaussian(&g, 0.0, 1.0, 0.0), 0.0, 0.0).map_err(err)? - PI.powf(0.25)).abs();
    let pass = id_err <= 1e-8 && tr_err <= 1e-6 && adj <= 1e-10 && planch <= 1e-10 && sob <= 1e-6;
    Ok((
        pass,
        format!(
            "Op(1) - I {id_err:.2e} (1e-8); translation {tr_err:.2e} (1e-6); adjoint {adj:.2e} (1e-10); Plancherel {planch:.2e} (1e-10); Gaussian norm {sob:.2e} (1e-6)"
        ),
    ))
}

// 9
fn inverse_residuals() -> Res {
    let g = grid256();
    let basis = band_basis(&g, &BasisSpec::default());
    let sample = SampleGrid::square(4.0, 17);
    let a = arc(PERTURBED, 0.0, 1.0);
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, p) in quant_eikonal(&g, PERTURBED, &[0.01, 0.02])?.into_iter().enumerate() {
        let d = 0.01 * (k + 1) as f64;
        let tau = certify_regular(&PhaseFunction::new(solve_eikonal(&a, d, 0.0, &sample, 1e-3, 1e-12).map_err(err)?), &sample, 0).map_err(err)?.tau;
        let r = invert_iphi(&g, &PhaseFunction::new(p), &basis).map_err(err)?.residual;
        pass &= tau <= 0.05 && r <= 1e-3;
        parts.push(format!("eikonal t-s={d}: tau {tau:.4}, residual {r:.2e}"));
    }
    for (name, phi) in [("identity", PhaseFunction::identity()), ("translation", PhaseFunction::translation(0.02))] {
        let r = invert_iphi(&g, &phi, &basis).map_err(err)?.residual;
        pass &= r <= 1e-4;
        parts.push(format!("{name}: {r:.2e}"));
    }
    Ok((pass, format!("{} (eikonal tol 1e-3, others 1e-4)", parts.join("; "))))
}

// 10
fn composed_symbols() -> Res {
    let g = grid256();
    let mut pass = true;
    let mut parts = Vec::new();
    let unit = [
        ("identity", PhaseChain::new(vec![PhaseFunction::identity(), PhaseFunction::identity()], vec![0.0, 0.0]).map_err(err)?),
        (
            "translation",
            PhaseChain::new(vec![PhaseFunction::translation(0.1), PhaseFunction::translation(-0.25)], vec![0.01, 0.02]).map_err(err)?,
        ),
    ];
    for (name, chain) in unit {
        let (_, r) = compose_extract_symbol(&g, &chain).map_err(err)?;
        pass &= r.sup_p_minus_one <= 1e-3;
        parts.push(format!("{name}: |p - 1| {:.2e}", r.sup_p_minus_one));
    }
    let ps = quant_eikonal(&g, PERTURBED, &[0.01, 0.02])?;
    let chain = PhaseChain::new(vec![PhaseFunction::new(ps[1].clone()), PhaseFunction::new(ps[0].clone())], vec![0.033, 0.0165]).map_err(err)?;
    let (_, r) = compose_extract_symbol(&g, &chain).map_err(err)?;
    let bound = 10.0;
    pass &= r.sup_p <= bound && r.dq_x <= bound && r.dq_xi <= bound;
    parts.push(format!("eikonal pair: sup |p| {:.4}, quotients {:.2e} / {:.2e} (bound {bound})", r.sup_p, r.dq_x, r.dq_xi));
    Ok((pass, format!("{} (unit tol 1e-3)", parts.join("; "))))
}

// 11
fn chain_factorization() -> Res {
    let g = grid256();
    let basis = band_basis(&g, &BasisSpec::default());
    let ps = quant_eikonal(&g, PERTURBED, &[0.01])?;
    let eik = PhaseFunction::new(ps[0].clone());
    let f = |a: &str, m: f64, mu: f64, phi: &PhaseFunction, tau: f64| ChainFactor { a: sym(a, m, mu), phi: phi.clone(), tau };
    let tr = PhaseFunction::translation(0.1);
    let id = PhaseFunction::identity();
    let corpus: Vec<(&str, Vec<ChainFactor>)> = vec![
        ("eikonal x3, 1/<xi>", (0..3).map(|_| f("1/ang(xi)", 0.0, -1.0, &eik, 0.0165)).collect()),
        (
            "eikonal x3, mixed",
            vec![f("1", 0.0, 0.0, &eik, 0.0165), f("1 + 0.2/ang(x)", 0.0, 0.0, &eik, 0.0165), f("(1 + 0.1*x/ang(x))/ang(xi)", 0.0, -1.0, &eik, 0.0165)],
        ),
        (
            "translation, eikonal, identity",
            vec![f("ang(xi)", 0.0, 1.0, &tr, 0.01), f("1/ang(xi)", 0.0, -1.0, &eik, 0.0165), f("1 + 0.2/ang(x)", 0.0, 0.0, &id, 0.0)],
        ),
    ];
    let c = [2.0, 8.0];
    let mut pass = true;
    let mut worst_res = 0.0f64;
    let mut worst_ratio = [0.0f64; 2];
    for (name, factors) in &corpus {
        let (_, r) = compose_chain(&g, factors, &basis).map_err(|e| format!("{name}: {e}"))?;
        worst_res = worst_res.max(r.factorization_residual);
        worst_ratio[0] = worst_ratio[0].max(r.ratio[0]);
        worst_ratio[1] = worst_ratio[1].max(r.ratio[1]);
        pass &= r.factorization_residual <= 1e-2 && r.ratio[0] <= c[0] && r.ratio[1] <= c[1];
    }
    Ok((
        pass,
        format!(
            "{} chains: factorization {worst_res:.2e} (tol 1e-2); seminorm ratios {:.3} / {:.3} (C = {} / {})",
            corpus.len(),
            worst_ratio[0],
            worst_ratio[1],
            c[0],
            c[1]
        ),
    ))
}

// 12
fn hyperbolic_suite() -> Res {
    let start = Instant::now();
    let g = QuantGrid::new(128, 12.0).map_err(err)?;
    let opts = HypOptions::default();
    let gauss = |c: f64| g.sample(|x| Complex64::new((-0.5 * (x - c) * (x - c)).exp(), 0.0));
    let mut pass = true;
    let mut parts = Vec::new();

    let sys = HyperbolicSystem::scalar(sym("xi", 0.0, 1.0), None, 0.0, 0.1).map_err(err)?;
    let fs = FundamentalSolution::build(&sys, &g, &opts).map_err(err)?;
    let w = solve_cauchy(&fs, &gauss(0.0), None).map_err(err)?;
    let e = fs.times.iter().zip(&w).map(|(&t, v)| rel_l2(v, &gauss(t))).fold(0.0, f64::max);
    pass &= e <= 1e-3;
    parts.push(format!("transport c*xi {e:.2e} (1e-3)"));

    let sys = HyperbolicSystem::scalar(sym("x*xi", 1.0, 1.0), None, 1.0, 0.1).map_err(err)?;
    let fs = FundamentalSolution::build(&sys, &g, &opts).map_err(err)?;
    let w = solve_cauchy(&fs, &gauss(0.0), None).map_err(err)?;
    let e = fs
        .times
        .iter()
        .zip(&w)
        .map(|(&t, v)| rel_l2(v, &g.sample(|x| Complex64::new((-0.5 * (x * (-t).exp()).powi(2)).exp(), 0.0))))
        .fold(0.0, f64::max);
    pass &= e <= 1e-2;
    parts.push(format!("transport x*xi {e:.2e} (1e-2)"));

    let r = Some(sym("0.5/ang(x)", -1.0, 0.0));
    let sys = HyperbolicSystem::scalar(sym("xi", 0.0, 1.0), r.clone(), 0.0, 0.1).map_err(err)?;
    let rep = FundamentalSolution::build(&sys, &g, &opts).map_err(err)?.report();
    pass &= rep.identity_bit_exact && rep.envelope.slope_ok && rep.telescoping_residual <= 1e-3;
    parts.push(format!(
        "E(s,s)=I {}; envelope slope {:.2} ok={}; telescoping {:.2e} (1e-3)",
        rep.identity_bit_exact, rep.envelope.slope, rep.envelope.slope_ok, rep.telescoping_residual
    ));

    let sys = HyperbolicSystem::new(vec![sym("ang(xi)", 0.0, 1.0), sym("-ang(xi)", 0.0, 1.0)], vec![vec![None, r.clone()], vec![r, None]], 0.0, 0.1)
        .map_err(err)?;
    let fs = FundamentalSolution::build(&sys, &g, &opts).map_err(err)?;
    let mut g0 = CVec::zeros(2 * g.n);
    g0.rows_mut(0, g.n).copy_from(&gauss(0.0));
    g0.rows_mut(g.n, g.n).copy_from(&gauss(1.0));
    let w = solve_cauchy(&fs, &g0, None).map_err(err)?;
    let refr = reference_solve(&sys, &g, &g0, None, &fs.times, None).map_err(err)?;
    let e = w.iter().zip(&refr.states).map(|(a, b)| rel_l2(a, b)).fold(0.0, f64::max);
    let rep = fs.report();
    pass &= e <= 1e-2 && rep.identity_bit_exact && rep.envelope.slope_ok && rep.telescoping_residual <= 1e-3;
    parts.push(format!("2x2 vs reference {e:.2e} (1e-2), envelope ok={}, telescoping {:.2e}", rep.envelope.slope_ok, rep.telescoping_residual));

    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    parts.push(format!("runtime {secs:.1} s (limit 300 s)"));
    Ok((pass, parts.join("; ")))
}

// 13
fn expansion_remainder() -> Res {
    let g = grid256();
    let p = quant_eikonal(&g, PERTURBED, &[0.05])?.remove(0);
    let r = first_order_expansion_check(&g, &sym("ang(xi)", 0.0, 1.0), &sym("1", 0.0, 0.0), &PhaseFunction::new(p), &[4.0, 8.0, 16.0]).map_err(err)?;
    let ratios: Vec<String> = r.ratios.iter().map(|v| format!("{v:.2e}")).collect();
    Ok((r.slope <= -0.8, format!("slope {:.3} (limit -0.8); ratios at lambda 4/8/16: {}", r.slope, ratios.join(", "))))
}

// 14
fn serial_determinism() -> Res {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().map_err(err)?;
    let mut compared = 0;
    let mut pass = true;
    for (sub, name) in [("multiprod", "multiprod_group.json"), ("hyperbolic", "hyperbolic_transport.json"), ("compose", "compose_eikonal.json")] {
        let mut runs = Vec::new();
        for k in 0..2 {
            let out = dir.path().join(format!("{sub}-{k}"));
            let st = Command::new(env!("CARGO_BIN_EXE_sgfio"))
                .args([sub, "--serial", "--config"])
                .arg(configs.join(name))
                .arg("--out")
                .arg(&out)
                .stderr(Stdio::null())
                .status()
                .map_err(err)?;
            if st.code() != Some(0) {
                return Ok((false, format!("{sub} exited with {:?}", st.code())));
            }
            let mut files: Vec<_> = std::fs::read_dir(&out).map_err(err)?.map(|e| e.unwrap().path()).collect();
            files.sort();
            let contents: Vec<(String, Vec<u8>)> =
                files.iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap())).collect();
            runs.push(contents);
        }
        compared += runs[0].len();
        pass &= runs[0] == runs[1];
    }
    Ok((pass, format!("{compared} output files compared across two serial runs of 3 configs")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 14] = [
        ("eikonal closed forms", eikonal_closed_forms),
        ("J growth linear in t-s, backward equation", j_linear_growth_and_backward),
        ("identity phase is neutral", identity_is_neutral),
        ("eikonal group law", group_law),
        ("critical-point bounds, contraction, restarts", critical_point_bounds),
        ("derivative relations and associativity", structure_of_four_phase_chain),
        ("determinant bounds", det_bounds),
        ("quantization identities", quantization_identities),
        ("inverse of I_phi", inverse_residuals),
        ("composed symbols", composed_symbols),
        ("chain factorization and seminorms", chain_factorization),
        ("hyperbolic fundamental solution", hyperbolic_suite),
        ("first-order expansion remainder", expansion_remainder),
        ("serial reruns are byte-identical", serial_determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(p) => (false, format!("panic: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())),
        };
        if !pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {detail} [{:.1} s]", if pass { "PASS" } else { "FAIL" }, k + 1, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
