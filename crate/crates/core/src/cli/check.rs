//! Invariant suites run by the `check` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::report::CheckItem;
use crate::dualsolver::{solve_dual, DualMode};
use crate::envelope::Envelope;
use crate::error::Result;
use crate::geometry::{make_domain, Domain};
use crate::integrands::{ConvexIntegrand, Entropy};
use crate::linalg::{dot, Point};
use crate::primal::{monotone_assignment, pushforward_error};
use crate::pseudograd::{projected_gradient_field, vsf, Displacement};
use crate::testspace::{build_space, SpaceKind};
use crate::transforms::{amp, amp_flat, flat, sharp, Potential};

fn item(name: &str, passed: bool, detail: String) -> CheckItem {
    CheckItem { name: name.into(), passed, detail }
}

fn sample_points(domain: &Domain, rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<Point> {
    (0..n)
        .map(|_| {
            if domain.dim() == 1 {
                [rng.gen_range(-radius..radius), 0.0]
            } else {
                [rng.gen_range(-radius..radius), rng.gen_range(-radius..radius)]
            }
        })
        .collect()
}

fn random_potential(domain: &Domain, rng: &mut ChaCha8Rng) -> Potential {
    let a: f64 = rng.gen_range(-1.0..1.0);
    let b: f64 = rng.gen_range(0.0..1.0);
    let c: f64 = rng.gen_range(-0.5..0.5) * domain.lambda().radius;
    let s: f64 = rng.gen_range(-0.5..0.5);
    Potential { values: domain.nodes.iter().map(|n| a * n.point[0] + b * (n.point[0] - c).abs() + s).collect() }
}

pub fn entropy_inverse() -> Result<CheckItem> {
    let mut worst: f64 = 0.0;
    for n in [0, 1, 64] {
        let h = Entropy::penalized(n);
        for i in -200..=200 {
            let s = i as f64 * 5.0;
            let t = h.derivative_inverse(s)?;
            worst = worst.max((h.derivative(t) - s).abs() / (1.0 + s.abs()));
        }
    }
    Ok(item("entropy_inverse", worst <= 1e-10, format!("max relative residual {worst:.3e}")))
}

pub fn transform_calculus(domain: &Domain, seed: u64) -> Result<CheckItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = Entropy::base();
    let probes = sample_points(domain, &mut rng, 100, 2.0 * domain.r_star);
    let (mut idem, mut lip, mut fy) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let l = random_potential(domain, &mut rng);
        let k = sharp(&l, &h, domain)?;
        let k2 = sharp(&flat(&k, &h, domain)?, &h, domain)?;
        let a = amp(&l, domain);
        let a2 = amp(&amp_flat(&a, domain)?, domain);
        for v in &probes {
            idem = idem.max((k.eval(*v) - k2.eval(*v)).abs()).max((a.eval(*v) - a2.eval(*v)).abs());
        }
        lip = lip.max(k.lipschitz() - domain.r_star).max(a.lipschitz() - domain.r_star);
        for _ in 0..500 {
            let j = rng.gen_range(0..domain.n_nodes());
            let t: f64 = rng.gen_range(0.05..5.0);
            let v = probes[rng.gen_range(0..probes.len())];
            let u = domain.nodes[j].point;
            fy = fy.max(dot(u, v) - k.eval(v) - t * l.values[j] - h.value(t)?);
        }
    }
    let ok = idem <= 1e-6 && lip <= 1e-8 && fy <= 1e-9;
    Ok(item(
        "transform_calculus",
        ok,
        format!("idempotence {idem:.3e}, Lipschitz excess {lip:.3e}, inequality violation {fy:.3e}"),
    ))
}

pub fn envelope_consistency(domain: &Domain) -> Result<CheckItem> {
    let pts: Vec<Point> = domain.nodes.iter().map(|n| n.point).collect();
    let vals: Vec<f64> = pts.iter().map(|p| p[0] * p[0]).collect();
    let env = Envelope::new(&pts, &vals, domain.dim());
    let worst = pts.iter().zip(&vals).map(|(p, v)| (env.eval(*p).unwrap_or(f64::NAN) - v).abs()).fold(0.0, f64::max);
    Ok(item("envelope_of_convex_data", worst <= 1e-12, format!("max deviation {worst:.3e}")))
}

pub fn vsf_monotone(domain: &Domain) -> Result<CheckItem> {
    let f = ConvexIntegrand::quadratic();
    let u = Displacement::identity(domain);
    let mut prev = f64::NEG_INFINITY;
    let mut mono = true;
    let mut last = 0.0;
    for level in 1..=6 {
        let sp = build_space(domain, SpaceKind::H1Subspace, level)?;
        last = vsf(&u, &sp, &f, domain)?.value;
        mono &= last >= prev - 1e-10;
        prev = last;
    }
    let eye = if domain.dim() == 1 { [[1.0, 0.0], [0.0, 0.0]] } else { [[1.0, 0.0], [0.0, 1.0]] };
    let target = f.f_eval(&eye) * domain.omega_measure();
    Ok(item(
        "vsf_monotone_in_level",
        mono && (last - target).abs() <= 1e-2,
        format!("monotone {mono}, V at level 6 = {last:.6}"),
    ))
}

pub fn projected_gradient(domain: &Domain) -> Result<CheckItem> {
    let f = ConvexIntegrand::quadratic();
    let sp = build_space(domain, SpaceKind::H1Subspace, 4)?;
    let u = Displacement::analytic(domain, |x| [x[0] * x[0], 0.0]);
    let g = projected_gradient_field(&u, &sp, &f, domain)?;
    let rel = (g.energy - g.vsf.value).abs() / g.vsf.value.abs().max(1e-300);
    Ok(item(
        "projected_gradient_consistency",
        rel <= 1e-6 && g.span_residual <= 1e-6,
        format!("energy mismatch {rel:.3e}, span residual {:.3e}", g.span_residual),
    ))
}

pub fn pushforward_identity(domain: &Domain) -> Result<CheckItem> {
    let u = monotone_assignment(domain);
    let errs = pushforward_error(&u, None, domain);
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let applicable = domain.dim() == 1 && domain.omega() == domain.lambda();
    Ok(item(
        "pushforward_of_discrete_identity",
        !applicable || worst <= 1e-8,
        if applicable { format!("max error {worst:.3e}") } else { "skipped: needs Omega = Lambda in 1D".into() },
    ))
}

pub fn weak_duality(cfg: &RunConfig, domain: &Domain) -> Result<CheckItem> {
    let sp = build_space(domain, cfg.space_kind, cfg.level)?;
    let forcing = cfg.forcing.build(domain);
    let mut gaps = Vec::new();
    let mut modes = vec![DualMode::compressible(Entropy::penalized(cfg.entropy_penalty))];
    if (domain.omega_measure() - domain.lambda_measure()).abs() <= 1e-12 * domain.omega_measure() {
        modes.push(DualMode::Incompressible);
    }
    for mode in modes {
        let out = solve_dual(mode, &forcing, domain, &sp, &cfg.integrand, &cfg.solver)?;
        gaps.push(out.primal.gap);
    }
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(item("weak_duality", min >= -1e-6, format!("gaps {gaps:?}")))
}

/// All suites on the domain of `cfg` (the reference 1D setting by default).
pub fn run_checks(cfg: &RunConfig) -> Result<Vec<CheckItem>> {
    let domain = make_domain(cfg.domain.clone())?;
    Ok(vec![
        entropy_inverse()?,
        transform_calculus(&domain, cfg.solver.seed)?,
        envelope_consistency(&domain)?,
        vsf_monotone(&domain)?,
        projected_gradient(&domain)?,
        pushforward_identity(&domain)?,
        weak_duality(cfg, &domain)?,
    ])
}
