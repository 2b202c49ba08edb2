use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polydual::dualsolver::{make_point, solve_dual, DualMode, Evaluator, Forcing, SolverOptions};
use polydual::geometry::{make_domain, Domain, DomainSpec, ShapeSpec};
use polydual::integrands::{ConvexIntegrand, Entropy};
use polydual::limitflow::{beta_bound, beta_deviation, l1_distance, limit_sweep, sweep_csv, SweepOptions};
use polydual::primal::{balanced_selection, monotone_assignment, primal_value, pushforward_error, recover_beta, recover_u};
use polydual::pseudograd::{vsf_with, Displacement, VsfOptions};
use polydual::testspace::{build_space, FieldCoeffs, SpaceKind, TestSpace};
use polydual::transforms::{tighten_pair, Potential};
use polydual::Error;

fn entropy_value(t: f64) -> f64 {
    t * t / 2.0 + 1.0 / t - 1.5
}

fn line(rho_o: f64, rho_l: f64, cells: usize, nodes: usize) -> Domain {
    make_domain(DomainSpec {
        dim: 1,
        omega: ShapeSpec::interval(rho_o),
        lambda: ShapeSpec::interval(rho_l),
        n_cells: cells,
        n_lambda_nodes: nodes,
        incompressible: false,
    })
    .unwrap()
}

fn zero_phi(space: &TestSpace) -> FieldCoeffs {
    space.zero()
}

#[test]
fn beta_inverts_the_entropy_derivative() {
    let d = line(0.5, 0.5, 16, 9);
    let s = build_space(&d, SpaceKind::H1Subspace, 2).unwrap();
    let f = ConvexIntegrand::quadratic();
    let fo = Forcing::linear(&d, 1.0);
    let idx: Vec<usize> = (0..d.n_cells()).map(|c| c % d.n_nodes()).collect();
    for n in [0, 1, 16, 64] {
        let mode = DualMode::compressible(Entropy::penalized(n));
        let p = make_point(mode, Potential::zeros(d.n_nodes()), zero_phi(&s), &fo, &d, &s, &f).unwrap();
        let beta = recover_beta(&p, &idx).unwrap().unwrap();
        assert!(beta.iter().all(|b| (b - 1.0).abs() < 1e-12), "n = {n}");
    }
    // H'(t) = t - 1/t^2, so H'(2) = 7/4
    let mode = DualMode::compressible(Entropy::base());
    let l = Potential { values: vec![-1.75; d.n_nodes()] };
    let p = make_point(mode, l, zero_phi(&s), &fo, &d, &s, &f).unwrap();
    let beta = recover_beta(&p, &idx).unwrap().unwrap();
    assert!(beta.iter().all(|b| (b - 2.0).abs() < 1e-10));
    let p0 = make_point(DualMode::Incompressible, Potential::zeros(d.n_nodes()), zero_phi(&s), &fo, &d, &s, &f).unwrap();
    assert!(recover_beta(&p0, &idx).unwrap().is_none());
}

#[test]
fn zero_potential_sends_cells_to_the_extreme_nodes() {
    let d = line(0.5, 0.5, 16, 9);
    let s = build_space(&d, SpaceKind::H1Subspace, 2).unwrap();
    let f = ConvexIntegrand::quadratic();
    let fo = Forcing::linear(&d, 1.0);
    let p = make_point(DualMode::Incompressible, Potential::zeros(d.n_nodes()), zero_phi(&s), &fo, &d, &s, &f).unwrap();
    let (u, _, _) = recover_u(&p, &fo, &s, 1e-9);
    for (c, cell) in d.cells.iter().enumerate() {
        assert_eq!(u.values[c][0], 0.5 * cell.center[0].signum());
    }

    let disc = make_domain(DomainSpec {
        dim: 2,
        omega: ShapeSpec::disc(0.5),
        lambda: ShapeSpec::disc(0.5),
        n_cells: 64,
        n_lambda_nodes: 19,
        incompressible: true,
    })
    .unwrap();
    let s2 = build_space(&disc, SpaceKind::H1Subspace, 2).unwrap();
    let fo2 = Forcing::linear(&disc, 1.0);
    let p2 = make_point(DualMode::Incompressible, Potential::zeros(disc.n_nodes()), zero_phi(&s2), &fo2, &disc, &s2, &f).unwrap();
    let (u2, _, _) = recover_u(&p2, &fo2, &s2, 1e-9);
    for (c, cell) in disc.cells.iter().enumerate() {
        let v = cell.center;
        let best = disc.nodes.iter().map(|n| n.point[0] * v[0] + n.point[1] * v[1]).fold(f64::NEG_INFINITY, f64::max);
        let got = u2.values[c];
        assert!((got[0] * v[0] + got[1] * v[1] - best).abs() < 1e-12);
        assert!(((got[0].powi(2) + got[1].powi(2)).sqrt() - 0.5).abs() < 1e-12);
    }
}

#[test]
fn unique_offset_wins_at_zero_input() {
    let d = line(0.5, 0.5, 16, 9);
    let s = build_space(&d, SpaceKind::H1Subspace, 2).unwrap();
    let f = ConvexIntegrand::quadratic();
    let fo = Forcing::zero(&d);
    let mut l = Potential { values: vec![1.0; d.n_nodes()] };
    l.values[3] = 0.0;
    let p = make_point(DualMode::Incompressible, l, zero_phi(&s), &fo, &d, &s, &f).unwrap();
    let (u, idx, ties) = recover_u(&p, &fo, &s, 1e-9);
    assert_eq!(ties, 0);
    assert!(idx.iter().all(|&j| j == 3));
    assert!(u.values.iter().all(|v| *v == d.nodes[3].point));
}

#[test]
fn primal_value_examples() {
    let d = line(0.5, 0.5, 64, 33);
    let s = build_space(&d, SpaceKind::H1Subspace, 4).unwrap();
    let f = ConvexIntegrand::quadratic();
    let h = Entropy::base();
    let id = Displacement::identity(&d);
    let (i0, v) = primal_value(&id, None, None, &d, &s, &f, &Forcing::zero(&d)).unwrap();
    assert_eq!(i0, v);
    assert!((0.0..=0.5 + 1e-12).contains(&i0));

    let c = [0.2, 0.0];
    let u = Displacement::constant(&d, c);
    let fo = Forcing::linear(&d, 1.0);
    let beta: Vec<f64> = d.cells.iter().map(|cell| 1.0 + cell.center[0]).collect();
    let (i, v) = primal_value(&u, Some(&beta), Some(&h), &d, &s, &f, &fo).unwrap();
    assert!(v.abs() < 1e-12);
    let oracle: f64 = d.cells.iter().zip(&beta).map(|(cell, b)| cell.volume * (entropy_value(*b) - cell.center[0] * c[0])).sum();
    assert!((i - oracle).abs() < 1e-12);
}

#[test]
fn pushforward_of_constant_and_identity_maps() {
    let d = line(0.5, 0.5, 64, 33);
    let c = 0.3;
    let errs = pushforward_error(&Displacement::constant(&d, [c, 0.0]), None, &d);
    let x1 = errs.iter().find(|e| e.0 == "x1").unwrap().1;
    assert!((x1 - c * d.omega_measure() / 0.5).abs() < 1e-12);
    let mono = pushforward_error(&monotone_assignment(&d), None, &d);
    assert!(mono.iter().all(|e| e.1 <= 1e-8), "{mono:?}");
}

#[test]
fn tightening_does_not_raise_the_dual_value() {
    let d = line(0.5, 0.5, 32, 17);
    let s = build_space(&d, SpaceKind::H1Subspace, 3).unwrap();
    let f = ConvexIntegrand::quadratic();
    let fo = Forcing::linear(&d, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for mode in [DualMode::compressible(Entropy::base()), DualMode::Incompressible] {
        let ev = Evaluator::new(mode, &fo, &d, &s, &f).unwrap();
        for _ in 0..25 {
            let l: Vec<f64> = (0..d.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..s.m()).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let p = ev.point(&l, &z).unwrap();
            let (_, l2) = tighten_pair(&p.potential, mode.entropy(), &d).unwrap();
            let q = ev.point(&l2.values, &z).unwrap();
            assert!(q.j_value <= p.j_value + 1e-10, "{} > {}", q.j_value, p.j_value);
        }
    }
}

#[test]
fn majorant_integral_respects_the_entropy_lower_bound() {
    let d = line(0.5, 0.5, 32, 17);
    let s = build_space(&d, SpaceKind::H1Subspace, 3).unwrap();
    let f = ConvexIntegrand::quadratic();
    let fo = Forcing::cubic(&d, 2.0);
    let h = Entropy::base();
    let mode = DualMode::compressible(h);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..25 {
        let l = Potential { values: (0..d.n_nodes()).map(|_| rng.gen_range(-2.0..2.0)).collect() };
        let phi = FieldCoeffs { coeffs: (0..s.m()).map(|_| rng.gen_range(-1.0..1.0)).collect(), eps: None };
        let p = make_point(mode, l.clone(), phi.clone(), &fo, &d, &s, &f).unwrap();
        let (_, divs) = s.eval_cells(&phi);
        let integral: f64 =
            d.cells.iter().enumerate().map(|(c, cell)| cell.volume * p.k.eval([fo.values[c][0] + divs[c][0], 0.0])).sum();
        let bound = d.omega_measure() * h.conjugate(l.s_l()).unwrap() - d.r_star * fo.l1_norm(&d);
        assert!(integral >= bound - 1e-12);
    }
}

#[test]
fn zero_forcing_solve_is_bounded_by_the_identity() {
    let d = make_domain(DomainSpec {
        dim: 1,
        omega: ShapeSpec::interval(0.5),
        lambda: ShapeSpec::interval(0.5),
        n_cells: 64,
        n_lambda_nodes: 33,
        incompressible: true,
    })
    .unwrap();
    let s = build_space(&d, SpaceKind::H2Convex, 3).unwrap();
    let f = ConvexIntegrand::quadratic();
    let fo = Forcing::zero(&d);
    let out = solve_dual(DualMode::Incompressible, &fo, &d, &s, &f, &SolverOptions::default()).unwrap();
    let id = monotone_assignment(&d);
    let v_id = vsf_with(&id, &s, &f, &d, &VsfOptions { tol: 1e-11, ..Default::default() }).unwrap().value;
    assert!(out.converged);
    assert!(out.point.j_value >= -v_id - 1e-9);
    assert!(out.relative_gap <= 1e-3);
}

#[test]
fn compressible_dual_lower_bound_at_the_identity_pair() {
    let d = line(0.5, 0.5, 64, 33);
    let s = build_space(&d, SpaceKind::H1Subspace, 3).unwrap();
    let f = ConvexIntegrand::quadratic();
    let fo = Forcing::linear(&d, 1.0);
    let h = Entropy::base();
    let out = solve_dual(DualMode::compressible(h), &fo, &d, &s, &f, &SolverOptions::default()).unwrap();
    let beta = vec![1.0; d.n_cells()];
    let (i, _) = primal_value(&monotone_assignment(&d), Some(&beta), Some(&h), &d, &s, &f, &fo).unwrap();
    assert!(-out.point.j_value <= i + 1e-9);
    assert!(out.primal.gap >= -out.primal.mass_defect - 1e-6);
}

#[test]
fn solves_are_deterministic() {
    let d = line(0.5, 0.5, 32, 17);
    let s = build_space(&d, SpaceKind::H1Subspace, 3).unwrap();
    let f = ConvexIntegrand::quadratic();
    let fo = Forcing::linear(&d, 1.0);
    let opts = SolverOptions { trace_every: 25, init: polydual::dualsolver::Init::Random, seed: 4, ..Default::default() };
    let a = solve_dual(DualMode::compressible(Entropy::base()), &fo, &d, &s, &f, &opts).unwrap();
    let b = solve_dual(DualMode::compressible(Entropy::base()), &fo, &d, &s, &f, &opts).unwrap();
    assert_eq!(a.point.j_value.to_bits(), b.point.j_value.to_bits());
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.primal.node_index, b.primal.node_index);
}

/// Four equal cells and three nodes with masses 1/4, 1/2, 1/4: exact pushforwards exist.
#[test]
fn small_problem_matches_brute_force() {
    let d = make_domain(DomainSpec {
        dim: 1,
        omega: ShapeSpec::interval(0.5),
        lambda: ShapeSpec::interval(0.5),
        n_cells: 4,
        n_lambda_nodes: 3,
        incompressible: true,
    })
    .unwrap();
    let w: Vec<f64> = d.nodes.iter().map(|n| n.weight).collect();
    assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    let s = build_space(&d, SpaceKind::H1Subspace, 2).unwrap();
    let f = ConvexIntegrand::quadratic();
    let fo = Forcing::linear(&d, 1.0);
    let mut best = f64::INFINITY;
    for code in 0..81usize {
        let idx: Vec<usize> = (0..4).map(|c| code / 3usize.pow(c as u32) % 3).collect();
        let mut count = [0usize; 3];
        idx.iter().for_each(|&j| count[j] += 1);
        if count != [1, 2, 1] {
            continue;
        }
        let u = Displacement { values: idx.iter().map(|&j| d.nodes[j].point).collect(), provenance: polydual::pseudograd::Provenance::Analytic };
        let (i, _) = primal_value(&u, None, None, &d, &s, &f, &fo).unwrap();
        best = best.min(i);
    }
    let out = solve_dual(DualMode::Incompressible, &fo, &d, &s, &f, &SolverOptions::default()).unwrap();
    assert!(-out.point.j_value <= best + 1e-9, "-J {} above brute-force minimum {best}", -out.point.j_value);
    assert!(out.primal.mass_defect < 1e-12);
    assert!(out.primal.i_value >= best - 1e-9);
    assert!((out.primal.i_value - best).abs() <= 1e-3 * (1.0 + best.abs()), "recovered {} vs {best}", out.primal.i_value);
}

#[test]
fn limit_helpers() {
    let d = line(0.5, 0.5, 64, 33);
    let id = Displacement::identity(&d);
    let shifted = Displacement::analytic(&d, |x| [(x[0] + 0.1).min(0.5), 0.0]);
    let oracle: f64 = d.cells.iter().map(|c| c.volume * ((c.center[0] + 0.1).min(0.5) - c.center[0]).abs()).sum();
    assert!((l1_distance(&d, &id, &shifted) - oracle).abs() < 1e-15);
    assert_eq!(beta_deviation(&d, None), 0.0);
    let beta = vec![1.5; d.n_cells()];
    assert!((beta_deviation(&d, Some(&beta)) - 0.5).abs() < 1e-14);

    let s = build_space(&d, SpaceKind::H1Subspace, 3).unwrap();
    let f = ConvexIntegrand::quadratic();
    let fo = Forcing::linear(&d, 1.0);
    let b = beta_bound(&d, &s, &f, &fo).unwrap();
    assert!(b.c0 >= 0.0);
    assert!((b.l2_bound(4, 1.0) - (b.c0 / 4.0).sqrt()).abs() < 1e-15);
    assert!(b.l2_bound(64, 1.0) < b.l2_bound(16, 1.0));
}

#[test]
fn penalized_primal_value_grows_with_n() {
    let d = line(0.5, 0.5, 64, 33);
    let s = build_space(&d, SpaceKind::H1Subspace, 3).unwrap();
    let f = ConvexIntegrand::quadratic();
    let fo = Forcing::linear(&d, 1.0);
    let u = monotone_assignment(&d);
    let beta: Vec<f64> = d.cells.iter().map(|c| 1.0 + 0.5 * c.center[0]).collect();
    let mut prev = f64::NEG_INFINITY;
    for n in [0, 1, 4, 16, 64] {
        let h = Entropy::penalized(n);
        let (i, _) = primal_value(&u, Some(&beta), Some(&h), &d, &s, &f, &fo).unwrap();
        assert!(i >= prev);
        prev = i;
    }
}

#[test]
fn sweep_rejects_bad_inputs_and_writes_csv() {
    let f = ConvexIntegrand::quadratic();
    let d = line(0.5, 0.25, 32, 17);
    let s = build_space(&d, SpaceKind::H1Subspace, 2).unwrap();
    let fo = Forcing::linear(&d, 1.0);
    assert!(matches!(limit_sweep(&fo, &d, &s, &f, &SweepOptions::default()), Err(Error::InvalidDomain(_))));

    let d = line(0.5, 0.5, 32, 17);
    let s = build_space(&d, SpaceKind::H1Subspace, 2).unwrap();
    let fo = Forcing::linear(&d, 1.0);
    let bad = SweepOptions { n_values: vec![4, 4], ..Default::default() };
    assert!(limit_sweep(&fo, &d, &s, &f, &bad).is_err());

    let opts = SweepOptions { n_values: vec![1, 4], ..Default::default() };
    let res = limit_sweep(&fo, &d, &s, &f, &opts).unwrap();
    assert_eq!(res.entries.len(), 2);
    assert!(res.dual_monotone);
    let csv = sweep_csv(&res);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,J_n,I_n,beta_l2,l1_to_baseline,tie_fraction"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn matching_respects_capacities() {
    let candidates = vec![vec![0, 1], vec![0], vec![1, 2], vec![2], vec![0, 2]];
    let (idx, matched) = balanced_selection(&candidates, &[2, 1, 2]);
    assert_eq!(matched, 5);
    let mut count = [0; 3];
    for (c, &j) in idx.iter().enumerate() {
        assert!(candidates[c].contains(&j));
        count[j] += 1;
    }
    assert_eq!(count, [2, 1, 2]);
}
