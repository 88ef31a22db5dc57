use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgfio::eikonal::{solve_eikonal_family, EikonalPhase, SweepOptions};
use sgfio::linalg::{self, CMat, CVec};
use sgfio::multiproduct::PhaseChain;
use sgfio::phase::PhaseFunction;
use sgfio::quantize::*;
use sgfio::symbols::{ang, SgSymbol};
use std::f64::consts::PI;
use std::sync::Arc;

fn grid() -> QuantGrid {
    QuantGrid::new(256, 12.0).unwrap()
}

fn sym(text: &str, m: f64, mu: f64) -> SgSymbol {
    SgSymbol::parse(text, m, mu).unwrap()
}

fn one() -> SgSymbol {
    sym("1", 0.0, 0.0)
}

fn gauss(g: &QuantGrid) -> GridFunction {
    gaussian(g, 0.0, 1.0, 0.0)
}

fn eikonal_phases(g: &QuantGrid, a: &str, s: f64, times: &[f64]) -> Vec<EikonalPhase> {
    let a = Arc::new(sym(a, 0.0, 1.0));
    solve_eikonal_family(&a, s, times, &g.xs(), &g.xis(), &SweepOptions { h: 1e-2, refine: 2 }).unwrap()
}

fn random_corpus(g: &QuantGrid, seed: u64) -> GridFunction {
    let b = band_basis(g, &BasisSpec::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = CVec::from_iterator(b.raw.ncols(), (0..b.raw.ncols()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))));
    &b.raw * c
}

/// `(2 pi)^-1 sum_j sum_i e^{i (phi(x, xi_j) - x_i xi_j)} a(x, xi_j) u_i dx dxi`
fn double_quadrature<K: Fn(f64, f64, f64) -> Complex64>(g: &QuantGrid, u: &GridFunction, x: f64, kernel: K) -> Complex64 {
    let (dx, dxi) = (g.dx(), g.dxi());
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..g.n {
        let xi = g.xi(j);
        for i in 0..g.n {
            acc += kernel(x, g.x(i), xi) * u[i];
        }
    }
    acc * dx * dxi / (2.0 * PI)
}

fn inner(g: &QuantGrid, u: &GridFunction, v: &GridFunction) -> Complex64 {
    u.iter().zip(v.iter()).map(|(a, b)| a * b.conj()).sum::<Complex64>() * g.dx()
}

#[test]
fn identity_and_translation_by_quadrature() {
    let g = grid();
    let u = gauss(&g);
    let id = apply_type1(&g, &one(), &PhaseFunction::identity(), &u).unwrap();
    assert!(id.warning.is_none());
    assert!(rel_l2(&id.u, &u) <= 1e-8);
    let tr = apply_type1(&g, &one(), &PhaseFunction::translation(0.1), &u).unwrap();
    let shifted = g.sample(|x| Complex64::new((-0.5 * (x + 0.1) * (x + 0.1)).exp(), 0.0));
    let err = (&tr.u - &shifted).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn undecayed_input_carries_a_warning() {
    let g = grid();
    let u = g.sample(|_| Complex64::new(1.0, 0.0));
    let r = apply_type1(&g, &one(), &PhaseFunction::identity(), &u).unwrap();
    assert!(r.warning.is_some());
    assert!(r.boundary_ratio > 0.5);
}

#[test]
fn smoothing_symbol_matches_double_quadrature() {
    let g = grid();
    let a = sym("1/ang(xi)", 0.0, -1.0);
    let u = gauss(&g);
    let r = apply_type1(&g, &a, &PhaseFunction::identity(), &u).unwrap();
    for k in (8..256).step_by(30).take(9) {
        let x = g.x(k);
        let want = double_quadrature(&g, &u, x, |x, y, xi| Complex64::from_polar(1.0 / ang(xi), (x - y) * xi));
        assert!((r.u[k] - want).norm() <= 1e-6, "x = {x}");
    }
}

#[test]
fn type2_identity_and_adjoint() {
    let g = grid();
    let u = gauss(&g);
    let r = apply_type2(&g, &one(), &PhaseFunction::identity(), &u).unwrap();
    assert!(rel_l2(&r.u, &u) <= 1e-8);

    let a = sym("ang(xi)*(1 + 0.2*cos(x))", 0.0, 1.0);
    let phi = PhaseFunction::parse("x*xi + 0.03*sin(x)*ang(xi)").unwrap();
    let m1 = type1_matrix(&g, &a, &phi).unwrap();
    let m2 = type2_matrix(&g, &a, &phi).unwrap();
    assert_eq!(m2.m, m1.m.adjoint());
    assert_eq!(m2.kind, OpKind::Type2);
    for seed in 0..3 {
        let u = random_corpus(&g, seed);
        let v = random_corpus(&g, seed + 100);
        let lhs = inner(&g, &m1.apply(&u), &v);
        let rhs = inner(&g, &u, &m2.apply(&v));
        assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }
}

#[test]
fn type2_with_eikonal_phase_matches_double_quadrature() {
    let g = grid();
    let p = eikonal_phases(&g, "ang(xi)*(1 + 0.1*sin(x))", 0.0, &[0.02]).remove(0);
    let phi = PhaseFunction::new(p.clone());
    let b = sym("1/ang(xi)", 0.0, -1.0);
    let u = gauss(&g);
    let r = apply_type2(&g, &b, &phi, &u).unwrap();
    let xs = g.xs();
    let xis = g.xis();
    for k in (20..236).step_by(27).take(9) {
        let x = g.x(k);
        let want = double_quadrature(&g, &u, x, |x, y, xi| {
            let i = xs.iter().position(|&v| v == y).unwrap();
            let j = xis.iter().position(|&v| v == xi).unwrap();
            Complex64::from_polar(1.0 / ang(xi), x * xi - p.node(i, j).0)
        });
        assert!((r.u[k] - want).norm() <= 1e-6, "x = {x}");
    }
}

#[test]
fn matrices_agree_with_direct_application() {
    let g = grid();
    let a = sym("ang(xi)/ang(x)", -1.0, 1.0);
    let phi = PhaseFunction::parse("x*xi + 0.05*ang(x)*ang(xi)").unwrap();
    let m = op_matrix(OpKind::Type1, &g, &a, &phi).unwrap();
    for seed in 0..3 {
        let u = random_corpus(&g, seed);
        let direct = apply_type1(&g, &a, &phi, &u).unwrap();
        assert!(rel_l2(&m.apply(&u), &direct.u) <= 1e-10);
    }
}

#[test]
fn pseudo_identity_translation_and_multiplier() {
    let g = grid();
    let basis = band_basis(&g, &BasisSpec::default());
    let id = op_matrix(OpKind::Pseudo, &g, &one(), &PhaseFunction::identity()).unwrap();
    assert!(op_norm(&(&id.m - linalg::identity(g.n)), &basis) <= 1e-8);

    let tr = type1_matrix(&g, &one(), &PhaseFunction::translation(0.3)).unwrap();
    let u = gauss(&g);
    let shifted = g.sample(|x| Complex64::new((-0.5 * (x + 0.3) * (x + 0.3)).exp(), 0.0));
    assert!((tr.apply(&u) - shifted).iter().map(|z| z.norm()).fold(0.0, f64::max) <= 1e-6);

    // F^-1 diag(<xi>) F with an explicit DFT matrix
    let n = g.n;
    let f = CMat::from_fn(n, n, |j, i| Complex64::from_polar(g.dx(), -g.x(i) * g.xi(j)));
    let finv = CMat::from_fn(n, n, |i, j| Complex64::from_polar(g.dxi() / (2.0 * PI), g.x(i) * g.xi(j)));
    let d = CMat::from_diagonal(&CVec::from_iterator(n, (0..n).map(|j| Complex64::new(ang(g.xi(j)), 0.0))));
    let oracle = &finv * (&d * &f);
    let m = pseudo_matrix(&g, &sym("ang(xi)", 0.0, 1.0)).unwrap();
    assert!(op_norm(&(&m.m - &oracle), &basis) <= 1e-8 * op_norm(&oracle, &basis));
}

#[test]
fn sobolev_norms() {
    let g = grid();
    let u = gauss(&g);
    assert!((sobolev_norm(&g, &u, 0.0, 0.0).unwrap() - PI.powf(0.25)).abs() <= 1e-6);
    let weighted = g.sample(|x| Complex64::new(ang(x).powf(1.5) * (-0.5 * x * x).exp(), 0.0));
    assert_eq!(sobolev_norm(&g, &u, 1.5, 0.0).unwrap(), l2_norm(&g, &weighted));
    // ||u||^2 + ||u'||^2 = sqrt(pi) + sqrt(pi)/2
    let h1 = sobolev_norm(&g, &u, 0.0, 1.0).unwrap();
    assert!((h1 * h1 - 1.5 * PI.sqrt()).abs() <= 1e-6);
}

#[test]
fn plancherel_on_corpus() {
    let g = grid();
    for seed in 0..5 {
        let u = random_corpus(&g, seed);
        let uh = fourier(&g, &u).unwrap();
        let lhs = l2_norm(&g, &u);
        let rhs = (g.dxi() * uh.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt() / (2.0 * PI).sqrt();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs);
        assert!(rel_l2(&inverse_fourier(&g, &uh).unwrap(), &u) <= 1e-10);
    }
}

#[test]
fn inverse_of_identity_and_translation() {
    let g = grid();
    let basis = band_basis(&g, &BasisSpec::default());
    let id = invert_iphi(&g, &PhaseFunction::identity(), &basis).unwrap();
    assert!(id.residual <= 1e-8, "{:e}", id.residual);
    let tr = invert_iphi(&g, &PhaseFunction::translation(0.02), &basis).unwrap();
    assert!(tr.residual <= 1e-4, "{:e}", tr.residual);
    let u = gauss(&g);
    let back = &tr.q_star * &u;
    let want = g.sample(|x| Complex64::new((-0.5 * (x - 0.02) * (x - 0.02)).exp(), 0.0));
    assert!(rel_l2(&back, &want) <= 1e-4);
}

#[test]
fn inverse_of_eikonal_fio() {
    let g = grid();
    let basis = band_basis(&g, &BasisSpec::default());
    let p = eikonal_phases(&g, "ang(xi)", 0.0, &[0.02]).remove(0);
    let inv = invert_iphi(&g, &PhaseFunction::new(p), &basis).unwrap();
    assert!(inv.residual <= 1e-3, "{:e}", inv.residual);
    assert!(inv.left_residual <= 1e-3, "{:e}", inv.left_residual);
    assert!(inv.a0_norm < 1.0);
}

#[test]
fn composed_symbol_of_identity_and_translations() {
    let g = grid();
    let chain = PhaseChain::new(vec![PhaseFunction::identity(), PhaseFunction::identity()], vec![0.0, 0.0]).unwrap();
    let (_, r) = compose_extract_symbol(&g, &chain).unwrap();
    assert!(r.sup_p_minus_one <= 1e-3, "{:e}", r.sup_p_minus_one);

    let chain = PhaseChain::new(vec![PhaseFunction::translation(0.1), PhaseFunction::translation(-0.25)], vec![0.01, 0.02]).unwrap();
    let (prod, r) = compose_extract_symbol(&g, &chain).unwrap();
    assert!(r.sup_p_minus_one <= 1e-3, "{:e}", r.sup_p_minus_one);
    let c = prod.point(3, 5);
    let (x, xi) = (prod.xs()[3], prod.xis()[5]);
    assert!((c.value - (x * xi - 0.15 * xi)).abs() <= 1e-10);
}

#[test]
fn composed_symbol_of_eikonal_pair() {
    let g = grid();
    let ps = eikonal_phases(&g, "ang(xi)", 0.0, &[0.01, 0.02]);
    // phi(0.02, 0.01) = phi(0.01, 0) for an autonomous symbol
    let chain = PhaseChain::new(vec![PhaseFunction::new(ps[0].clone()), PhaseFunction::new(ps[0].clone())], vec![0.011, 0.011]).unwrap();
    let (prod, r) = compose_extract_symbol(&g, &chain).unwrap();
    assert!(r.sup_p_minus_one <= 0.1, "{}", r.sup_p_minus_one);
    assert!(r.dq_x.is_finite() && r.dq_xi.is_finite());
    assert!(r.dq_x <= 1.0 && r.dq_xi <= 1.0, "{} {}", r.dq_x, r.dq_xi);
    // group law on the probed nodes
    let xs = g.xs();
    let xis = g.xis();
    for (a, &x) in prod.xs().iter().enumerate().step_by(17) {
        for (b, &xi) in prod.xis().iter().enumerate().step_by(13) {
            let i = xs.iter().position(|&v| v == x).unwrap();
            let j = xis.iter().position(|&v| v == xi).unwrap();
            assert!((prod.point(a, b).value - ps[1].node(i, j).0).abs() <= 1e-5);
        }
    }
}

#[test]
fn composition_with_identity_phase_is_pseudodifferential() {
    let g = grid();
    let phi = PhaseFunction::parse("x*xi + 0.02*sin(x)*ang(xi)").unwrap();
    let chain = PhaseChain::new(vec![phi.clone(), PhaseFunction::identity()], vec![0.03, 0.0]).unwrap();
    let (_, r) = compose_extract_symbol(&g, &chain).unwrap();
    // symbol of I_phi alone, probed the same way
    let probe = Probe::standard(&g);
    let m = fio_matrix(&g, &phi).unwrap();
    let xs = g.xs();
    let xis = g.xis();
    let single = extract_symbol(&g, &m.m, &probe, |a, b| Ok(phi.value(xs[probe.rows[a]], xis[probe.cols[b]])?)).unwrap();
    let diff = r.symbol.values.iter().zip(&single.values).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
    assert!(diff <= 1e-3, "{diff:e}");
}

#[test]
fn chain_of_identities_and_translations() {
    let g = grid();
    let basis = band_basis(&g, &BasisSpec::default());
    let f = |phi: PhaseFunction, tau| ChainFactor { a: one(), phi, tau };
    let (_, r) = compose_chain(&g, &[f(PhaseFunction::identity(), 0.0), f(PhaseFunction::identity(), 0.0)], &basis).unwrap();
    assert!(r.factorization_residual <= 1e-8);
    assert!((r.op_norm - 1.0).abs() <= 1e-8);

    let factors = [f(PhaseFunction::translation(0.1), 0.01), f(PhaseFunction::translation(0.15), 0.015)];
    let (_, r) = compose_chain(&g, &factors, &basis).unwrap();
    assert!(r.factorization_residual <= 1e-4, "{:e}", r.factorization_residual);
    let mats: Vec<_> = factors.iter().map(|fc| fio_matrix(&g, &fc.phi).unwrap().m).collect();
    let a = linalg::matmul(&mats[0], &mats[1]);
    let want = fio_matrix(&g, &PhaseFunction::translation(0.25)).unwrap();
    assert!(op_norm(&(&a - &want.m), &basis) <= 1e-4);
}

#[test]
fn three_factor_eikonal_chain() {
    let g = grid();
    let basis = band_basis(&g, &BasisSpec::default());
    let ps = eikonal_phases(&g, "ang(xi)*(1 + 0.1*sin(x))", 0.0, &[0.01]);
    let a = sym("1/ang(xi)", 0.0, -1.0);
    let factors: Vec<ChainFactor> = (0..3).map(|_| ChainFactor { a: a.clone(), phi: PhaseFunction::new(ps[0].clone()), tau: 0.0165 }).collect();
    let (_, r) = compose_chain(&g, &factors, &basis).unwrap();
    assert!(r.factorization_residual <= 1e-2, "{:e}", r.factorization_residual);
    assert!(r.ratio[0].is_finite() && r.ratio[1].is_finite());
}

#[test]
fn expansion_exact_cases() {
    let g = grid();
    let phi = PhaseFunction::parse("x*xi + 0.05*sin(x)*ang(xi)").unwrap();
    let r = first_order_expansion_check(&g, &one(), &sym("ang(xi)/ang(x)", -1.0, 1.0), &phi, &[4.0, 8.0, 16.0]).unwrap();
    assert!(r.ratios.iter().all(|&v| v <= 1e-10), "{:?}", r.ratios);
    let r = first_order_expansion_check(&g, &sym("ang(xi)", 0.0, 1.0), &one(), &PhaseFunction::identity(), &[4.0, 8.0, 16.0]).unwrap();
    assert!(r.ratios.iter().all(|&v| v <= 1e-8), "{:?}", r.ratios);
}

#[test]
fn expansion_remainder_decays() {
    let g = grid();
    let p = eikonal_phases(&g, "ang(xi) + 0.1*sin(x)*ang(xi)", 0.0, &[0.05]).remove(0);
    let r = first_order_expansion_check(&g, &sym("ang(xi)", 0.0, 1.0), &one(), &PhaseFunction::new(p), &[4.0, 8.0, 16.0]).unwrap();
    assert!(r.slope <= -0.8, "{:?}", r);
}

#[test]
fn boundedness_on_sobolev_scale() {
    let g = grid();
    let basis = band_basis(&g, &BasisSpec::default());
    for (text, m, mu) in [("ang(xi)", 0.0, 1.0), ("ang(x)*ang(xi)", 1.0, 1.0), ("1/ang(xi)", 0.0, -1.0)] {
        let a = sym(text, m, mu);
        for (r, rho) in [(0.0, 0.0), (1.0, 0.5)] {
            let rep = boundedness_check(&g, &a, r, rho, &basis, 3, 20).unwrap();
            assert!(rep.pass, "{text}: {rep:?}");
            assert!(rep.min_ratio > 0.0);
        }
    }
}
