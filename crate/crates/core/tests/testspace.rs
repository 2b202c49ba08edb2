use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polydual::geometry::{make_domain, Domain, DomainSpec, ShapeSpec};
use polydual::testspace::{build_h1_space, build_h2_space, FieldCoeffs, TestSpace};
use polydual::Error;

fn line(cells: usize) -> Domain {
    make_domain(DomainSpec {
        dim: 1,
        omega: ShapeSpec::interval(0.5),
        lambda: ShapeSpec::interval(0.5),
        n_cells: cells,
        n_lambda_nodes: 33,
        incompressible: true,
    })
    .unwrap()
}

fn disc() -> Domain {
    let r = 1.0 / std::f64::consts::PI.sqrt();
    make_domain(DomainSpec {
        dim: 2,
        omega: ShapeSpec::disc(r),
        lambda: ShapeSpec::disc(r),
        n_cells: 256,
        n_lambda_nodes: 61,
        incompressible: true,
    })
    .unwrap()
}

fn random_coeffs(space: &TestSpace, rng: &mut ChaCha8Rng) -> FieldCoeffs {
    let mut phi = space.zero();
    for c in &mut phi.coeffs {
        *c = rng.gen_range(-1.0..1.0);
    }
    if let Some(e) = phi.eps.as_mut() {
        *e += rng.gen_range(0.0..1.0);
    }
    phi
}

fn random_point(domain: &Domain, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let r = domain.omega().radius;
    loop {
        let p = if domain.dim() == 1 {
            [rng.gen_range(-r..r), 0.0]
        } else {
            [rng.gen_range(-r..r), rng.gen_range(-r..r)]
        };
        if domain.in_omega(p) && (p[0] * p[0] + p[1] * p[1]).sqrt() < 0.99 * r {
            return p;
        }
    }
}

#[test]
fn level_one_has_a_single_central_hat() {
    let d = line(64);
    let s = build_h1_space(&d, 1).unwrap();
    assert_eq!(s.m(), 1);
    let phi = FieldCoeffs { coeffs: vec![1.0], eps: None };
    assert!((s.value_at(&phi, [0.0, 0.0]).unwrap()[0][0] - 1.0).abs() < 1e-15);
    assert!(s.value_at(&phi, [0.25, 0.0]).unwrap()[0][0] < 1.0);
}

#[test]
fn level_three_hats_have_two_slopes() {
    let d = line(64);
    let s = build_h1_space(&d, 3).unwrap();
    assert_eq!(s.m(), 7);
    for i in 0..s.n_scalar() {
        let sl = s.hat_slopes(i);
        assert_eq!(sl.len(), 2);
        assert!(sl.iter().all(|v| *v != 0.0));
    }
}

#[test]
fn disc_basis_vanishes_on_boundary_vertices() {
    let d = disc();
    let s = build_h1_space(&d, 2).unwrap();
    assert_eq!(s.m(), 4 * s.interior_vertex_count());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let phi = random_coeffs(&s, &mut rng);
    let bv = s.boundary_vertices();
    assert!(!bv.is_empty());
    for v in bv {
        // nudge inward so the point is inside the polygon
        let p = [v[0] * (1.0 - 1e-12), v[1] * (1.0 - 1e-12)];
        let m = s.value_at(&phi, p).unwrap();
        for row in m {
            for x in row {
                assert!(x.abs() < 1e-9, "value {x} at boundary vertex {v:?}");
            }
        }
    }
}

#[test]
fn choquet_part_on_the_disc() {
    let d = disc();
    let s = build_h2_space(&d, 2).unwrap();
    let rho = d.omega().radius;
    for k in 0..16 {
        let a = k as f64 * std::f64::consts::TAU / 16.0;
        assert!(s.psi([rho * a.cos(), rho * a.sin()]).abs() < 1e-15);
    }
    let phi = FieldCoeffs { coeffs: vec![0.0; s.m()], eps: Some(1.0) };
    let dv = s.div_at(&phi, [0.1, -0.2]).unwrap();
    assert!((dv[0] - 0.1).abs() < 1e-14 && (dv[1] + 0.2).abs() < 1e-14);
    // the Jacobian of div phi0 is the identity: its finite differences are unit
    let h = 1e-4;
    let base = s.div_at(&phi, [0.1, -0.2]).unwrap();
    let dx = s.div_at(&phi, [0.1 + h, -0.2]).unwrap();
    let dy = s.div_at(&phi, [0.1, -0.2 + h]).unwrap();
    let jac = [[(dx[0] - base[0]) / h, (dy[0] - base[0]) / h], [(dx[1] - base[1]) / h, (dy[1] - base[1]) / h]];
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    assert!((det - 1.0).abs() < 1e-8);
    assert_eq!(s.eps_min(), Some(0.5));
}

#[test]
fn zero_field_and_hat_slope() {
    let d = line(64);
    let s = build_h2_space(&d, 3).unwrap();
    let o = s.origin();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let x = random_point(&d, &mut rng);
        assert_eq!(s.value_at(&o, x).unwrap()[0][0], 0.0);
        assert_eq!(s.div_at(&o, x).unwrap()[0], 0.0);
    }
    let s1 = build_h1_space(&d, 1).unwrap();
    let peak = 0.7;
    let phi = FieldCoeffs { coeffs: vec![peak], eps: None };
    let slope = s1.div_at(&phi, [-0.2, 0.0]).unwrap()[0];
    assert!((slope - peak / 0.5).abs() < 1e-14);
}

#[test]
fn evaluation_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for d in [line(64), disc()] {
        let s = build_h2_space(&d, 3).unwrap();
        let a = random_coeffs(&s, &mut rng);
        let b = random_coeffs(&s, &mut rng);
        let ab = a.add(&b);
        for _ in 0..100 {
            let x = random_point(&d, &mut rng);
            let (da, db, dab) = (s.div_at(&a, x).unwrap(), s.div_at(&b, x).unwrap(), s.div_at(&ab, x).unwrap());
            for i in 0..2 {
                assert!((da[i] + db[i] - dab[i]).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn outside_points_and_level_guard_are_errors() {
    let d = line(64);
    let s = build_h1_space(&d, 2).unwrap();
    assert!(matches!(s.div_at(&s.zero(), [0.75, 0.0]), Err(Error::OutsideDomain { .. })));
    assert!(matches!(build_h1_space(&d, 0), Err(Error::LevelOutOfRange(0))));
    assert!(matches!(build_h2_space(&d, 13), Err(Error::LevelOutOfRange(13))));
}

#[test]
fn divergence_theorem_and_integration_by_parts_in_one_dimension() {
    let d = line(64);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for level in 1..=6 {
        let s = build_h1_space(&d, level).unwrap();
        for _ in 0..5 {
            let phi = random_coeffs(&s, &mut rng);
            let (vals, divs) = s.eval_cells(&phi);
            let total: f64 = d.cells.iter().zip(&divs).map(|(c, v)| c.volume * v[0]).sum();
            assert!(total.abs() < 1e-8, "int div phi = {total}");
            let (a, b): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let lhs: f64 = d.cells.iter().zip(&divs).map(|(c, v)| c.volume * (a * c.center[0] + b) * v[0]).sum();
            let rhs: f64 = -d.cells.iter().zip(&vals).map(|(c, m)| c.volume * a * m[0][0]).sum::<f64>();
            assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn coarse_coefficients_embed_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for d in [line(64), disc()] {
        let coarse = build_h1_space(&d, 2).unwrap();
        let fine = build_h1_space(&d, 4).unwrap();
        let phi = random_coeffs(&coarse, &mut rng);
        let up = fine.embed(&phi);
        for _ in 0..100 {
            let x = random_point(&d, &mut rng);
            let (a, b) = (coarse.value_at(&phi, x).unwrap(), fine.value_at(&up, x).unwrap());
            for i in 0..2 {
                for j in 0..2 {
                    assert!((a[i][j] - b[i][j]).abs() < 1e-14);
                }
            }
        }
    }
}

#[test]
fn convex_family_divergence_is_strictly_increasing_inside_mesh_cells() {
    let d = line(64);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let s = build_h2_space(&d, 4).unwrap();
    let nodes = s.mesh_nodes_1d();
    for _ in 0..10 {
        let phi = random_coeffs(&s, &mut rng);
        let eps = phi.eps.unwrap();
        assert!(eps >= s.eps_min().unwrap());
        for w in nodes.windows(2) {
            let (a, b) = (w[0] + 0.25 * (w[1] - w[0]), w[0] + 0.75 * (w[1] - w[0]));
            let slope = (s.div_at(&phi, [b, 0.0]).unwrap()[0] - s.div_at(&phi, [a, 0.0]).unwrap()[0]) / (b - a);
            assert!((slope - eps).abs() < 1e-9 && slope > 0.0);
        }
    }
}
