//! The operator `V_S^f(u) = sup_{phi in S} int(-u.div phi - f*(phi))`, its
//! constrained field `grad_S u`, and the variational-inequality certificate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::integrands::{ConvexIntegrand, Family};
use crate::linalg::{frob, inf_norm, mat_scale, vdot, Mat, Point, SpdSolver, ZERO, ZERO_MAT};
use crate::testspace::{FieldCoeffs, SpaceKind, TestSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    Recovered,
}

/// Cell-constant map `Omega -> closure(Lambda)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub values: Vec<Point>,
    pub provenance: Provenance,
}

impl Displacement {
    pub fn analytic(domain: &Domain, g: impl Fn(Point) -> Point) -> Self {
        Self { values: domain.cells.iter().map(|c| g(c.center)).collect(), provenance: Provenance::Analytic }
    }

    pub fn identity(domain: &Domain) -> Self {
        Self::analytic(domain, |x| x)
    }

    pub fn constant(domain: &Domain, c: Point) -> Self {
        Self::analytic(domain, |_| c)
    }

    pub fn is_valid(&self, domain: &Domain) -> bool {
        self.values.len() == domain.n_cells() && self.values.iter().all(|u| domain.in_lambda(*u))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VsfOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<FieldCoeffs>,
}

impl Default for VsfOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100_000, warm_start: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VsfResult {
    pub value: f64,
    pub phi: FieldCoeffs,
    pub iterations: usize,
    pub first_order_residual: f64,
    pub converged: bool,
}

pub(crate) fn volumes(domain: &Domain) -> Vec<f64> {
    domain.cells.iter().map(|c| c.volume).collect()
}

/// Linear part `b_k = -sum_c vol_c u_c . div e_k(x_c)`.
pub(crate) fn linear_term(u: &Displacement, space: &TestSpace, vol: &[f64]) -> Vec<f64> {
    let a = vec![ZERO_MAT; vol.len()];
    let b: Vec<Point> = u.values.iter().zip(vol).map(|(u, w)| [-w * u[0], -w * u[1]]).collect();
    space.pullback(&a, &b)
}

/// The concave objective `T` at `phi`.
pub fn objective(u: &Displacement, space: &TestSpace, f: &ConvexIntegrand, domain: &Domain, phi: &FieldCoeffs) -> f64 {
    let (vals, divs) = space.eval_cells(phi);
    domain
        .cells
        .iter()
        .enumerate()
        .map(|(c, cell)| cell.volume * (-(u.values[c][0] * divs[c][0] + u.values[c][1] * divs[c][1]) - f.f_conj(&vals[c])))
        .sum()
}

struct Precond {
    block: Option<SpdSolver>,
    eps_diag: Option<f64>,
    m: usize,
}

impl Precond {
    fn new(space: &TestSpace, vol: &[f64]) -> Self {
        let gram = space.gram(vol);
        let m = space.m();
        let block = SpdSolver::new(gram.view((0, 0), (m, m)).into_owned());
        let eps_diag = space.is_convex_family().then(|| gram[(m, m)].max(1e-300));
        Self { block, eps_diag, m }
    }

    fn apply(&self, g: &[f64]) -> Vec<f64> {
        let mut d = match &self.block {
            Some(s) => s.solve(&g[..self.m]),
            None => g[..self.m].to_vec(),
        };
        if let Some(e) = self.eps_diag {
            d.push(g[self.m] / e);
        }
        d
    }
}

fn project(space: &TestSpace, z: &mut [f64]) {
    if let Some(e) = space.eps_min() {
        let m = space.m();
        if z[m] < e {
            z[m] = e;
        }
    }
}

pub fn vsf(u: &Displacement, space: &TestSpace, f: &ConvexIntegrand, domain: &Domain) -> Result<VsfResult> {
    vsf_with(u, space, f, domain, &VsfOptions::default())
}

pub fn vsf_with(
    u: &Displacement,
    space: &TestSpace,
    f: &ConvexIntegrand,
    domain: &Domain,
    opts: &VsfOptions,
) -> Result<VsfResult> {
    if u.values.len() != domain.n_cells() {
        return Err(Error::Dimension(format!("{} displacement values for {} cells", u.values.len(), domain.n_cells())));
    }
    match f.family {
        Family::Power { .. } => ascent(u, space, f, domain, opts),
        Family::AbsoluteValue => pdhg(u, space, f, domain, opts),
    }
}

fn gradient(space: &TestSpace, f: &ConvexIntegrand, vol: &[f64], b: &[f64], z: &[f64]) -> (f64, Vec<f64>) {
    let phi = space.from_flat(z);
    let (vals, _) = space.eval_cells(&phi);
    let mut fstar = 0.0;
    let a: Vec<Mat> = vals
        .iter()
        .zip(vol)
        .map(|(v, w)| {
            fstar += w * f.f_conj(v);
            mat_scale(*w, &f.grad_fstar_minnorm(v).unwrap_or(ZERO_MAT))
        })
        .collect();
    let pull = space.pullback(&a, &vec![ZERO; vol.len()]);
    let g: Vec<f64> = b.iter().zip(&pull).map(|(b, p)| b - p).collect();
    (vdot(b, z) - fstar, g)
}

fn free_residual(space: &TestSpace, z: &[f64], g: &[f64]) -> f64 {
    let mut r = g.to_vec();
    if let Some(e) = space.eps_min() {
        let m = space.m();
        if z[m] <= e && r[m] < 0.0 {
            r[m] = 0.0;
        }
    }
    inf_norm(&r)
}

fn ascent(u: &Displacement, space: &TestSpace, f: &ConvexIntegrand, domain: &Domain, opts: &VsfOptions) -> Result<VsfResult> {
    let vol = volumes(domain);
    let b = linear_term(u, space, &vol);
    let pre = Precond::new(space, &vol);
    let mut z = opts.warm_start.as_ref().map(|p| p.flatten()).unwrap_or_else(|| space.zero().flatten());
    project(space, &mut z);
    let (mut t, mut g) = gradient(space, f, &vol, &b, &z);
    let mut iterations = 0;
    let mut residual = free_residual(space, &z, &g);
    let mut converged = residual <= opts.tol;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let d = pre.apply(&g);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = z.iter().zip(&d).map(|(z, d)| z + alpha * d).collect();
            project(space, &mut trial);
            let step: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
            let (tt, gt) = gradient(space, f, &vol, &b, &trial);
            if tt >= t + 1e-4 * vdot(&g, &step) {
                accepted = Some((trial, tt, gt));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((zn, tn, gn)) => {
                let stalled = (tn - t).abs() <= 1e-16 * (1.0 + t.abs());
                z = zn;
                t = tn;
                g = gn;
                residual = free_residual(space, &z, &g);
                converged = residual <= opts.tol || (stalled && residual <= 1e3 * opts.tol);
            }
            None => {
                if residual <= 1e3 * opts.tol {
                    break;
                }
                return Err(Error::LineSearch { iterations, value: t });
            }
        }
    }
    Ok(VsfResult { value: t, phi: space.from_flat(&z), iterations, first_order_residual: residual, converged })
}

/// Primal-dual hybrid gradient with diagonal preconditioning for `f = s|xi|`:
/// maximize `b.z` subject to `|phi(x_c)| <= s` at every cell center.
fn pdhg(u: &Displacement, space: &TestSpace, f: &ConvexIntegrand, domain: &Domain, opts: &VsfOptions) -> Result<VsfResult> {
    let vol = volumes(domain);
    let b = linear_term(u, space, &vol);
    let s = f.scale;
    let nv = space.n_vars();
    let nc = domain.n_cells();
    let d = space.dim();

    let mut col_sum = vec![0.0; nv];
    let mut row_sum = vec![0.0; nc];
    for c in 0..nc {
        let mut entry_rows = [[0.0; 2]; 2];
        for (k, cs) in col_sum.iter_mut().enumerate() {
            let (m, _) = space.basis_cell(k, c);
            for i in 0..d {
                for j in 0..d {
                    let a = m[i][j].abs();
                    *cs += a;
                    entry_rows[i][j] += a;
                }
            }
        }
        row_sum[c] = entry_rows.iter().flatten().fold(0.0_f64, |a, &x| a.max(x));
    }
    let tau: Vec<f64> = col_sum.iter().map(|&x| if x > 0.0 { 1.0 / x } else { 0.0 }).collect();
    let sigma: Vec<f64> = row_sum.iter().map(|&x| if x > 0.0 { 1.0 / x } else { 0.0 }).collect();

    let feasible = |z: &[f64]| -> (Vec<f64>, f64) {
        let (vals, _) = space.eval_cells(&space.from_flat(z));
        let worst = vals.iter().map(frob).fold(0.0, f64::max);
        let theta = if worst > s { s / worst } else { 1.0 };
        let zf: Vec<f64> = z.iter().map(|x| x * theta).collect();
        let v = vdot(&b, &zf);
        (zf, v)
    };

    let mut x = opts.warm_start.as_ref().map(|p| p.flatten()).unwrap_or_else(|| space.zero().flatten());
    project(space, &mut x);
    let mut xbar = x.clone();
    let mut y = vec![ZERO_MAT; nc];
    let check_every = 500;
    let mut last_value = f64::NEG_INFINITY;
    let mut best: (Vec<f64>, f64) = feasible(&x);
    let mut iterations = 0;
    let mut converged = false;
    let mut stationarity = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let (kx, _) = space.eval_cells(&space.from_flat(&xbar));
        for c in 0..nc {
            let sg = sigma[c];
            if sg == 0.0 {
                continue;
            }
            let w = crate::linalg::mat_add(&y[c], &mat_scale(sg, &kx[c]));
            let r = frob(&w) / sg;
            // w - sigma * proj_{B_s}(w / sigma)
            y[c] = if r <= s { ZERO_MAT } else { mat_scale(1.0 - s / r, &w) };
        }
        let kty = space.pullback(&y, &vec![ZERO; nc]);
        let mut xn: Vec<f64> = (0..nv).map(|k| x[k] - tau[k] * (kty[k] - b[k])).collect();
        project(space, &mut xn);
        for k in 0..nv {
            xbar[k] = 2.0 * xn[k] - x[k];
        }
        x = xn;
        if iterations % check_every == 0 {
            let (zf, v) = feasible(&x);
            if v > best.1 {
                best = (zf, v);
            }
            stationarity = free_residual(space, &x, &kty.iter().zip(&b).map(|(a, b)| b - a).collect::<Vec<_>>());
            let (vals, _) = space.eval_cells(&space.from_flat(&x));
            let viol = vals.iter().map(|m| (frob(m) - s).max(0.0)).fold(0.0, f64::max) / s;
            if (v - last_value).abs() <= 1e-10 * (1.0 + v.abs()) && viol <= 1e-6 {
                converged = true;
                break;
            }
            last_value = v;
        }
    }
    let (zf, v) = feasible(&x);
    if v > best.1 {
        best = (zf, v);
    }
    Ok(VsfResult {
        value: best.1,
        phi: space.from_flat(&best.0),
        iterations,
        first_order_residual: stationarity,
        converged,
    })
}

/// The minimizer `grad_S u` of `int f(G)` over `G` satisfying the discrete
/// integration-by-parts constraints, with consistency diagnostics.
#[derive(Clone, Debug)]
pub struct ProjectedGradient {
    pub field: Vec<Mat>,
    pub vsf: VsfResult,
    /// `sum_c vol_c f(G_c)`.
    pub energy: f64,
    /// Largest violation of the constraints relative to the right-hand side scale.
    pub constraint_residual: f64,
    /// Relative distance of `Df(G)` from the span of the test family at the cells.
    pub span_residual: f64,
}

pub fn projected_gradient_field(
    u: &Displacement,
    space: &TestSpace,
    f: &ConvexIntegrand,
    domain: &Domain,
) -> Result<ProjectedGradient> {
    if !f.is_strictly_convex() {
        return Err(Error::Unsupported(
            "projected gradient is not unique for the absolute value integrand".into(),
        ));
    }
    if space.kind != SpaceKind::H1Subspace {
        return Err(Error::Unsupported("projected gradient requires a linear test family".into()));
    }
    let opts = VsfOptions { tol: 1e-12, ..Default::default() };
    let res = vsf_with(u, space, f, domain, &opts)?;
    let (vals, _) = space.eval_cells(&res.phi);
    let field: Vec<Mat> = vals.iter().map(|v| f.grad_fstar_minnorm(v)).collect::<Result<_>>()?;
    let vol = volumes(domain);
    let energy: f64 = field.iter().zip(&vol).map(|(g, w)| w * f.f_eval(g)).sum();

    let b = linear_term(u, space, &vol);
    let weighted: Vec<Mat> = field.iter().zip(&vol).map(|(g, w)| mat_scale(*w, g)).collect();
    let lhs = space.pullback(&weighted, &vec![ZERO; vol.len()]);
    let scale = inf_norm(&b).max(1e-300);
    let constraint_residual = lhs.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;

    let dfg: Vec<Mat> = field.iter().map(|g| f.df(g)).collect();
    let span_residual = span_distance(space, &vol, &dfg);
    Ok(ProjectedGradient { field, vsf: res, energy, constraint_residual, span_residual })
}

/// Weighted least-squares distance of a cell field from the span of the basis, relative to its norm.
pub fn span_distance(space: &TestSpace, vol: &[f64], field: &[Mat]) -> f64 {
    let m = space.m();
    let weighted: Vec<Mat> = field.iter().zip(vol).map(|(g, w)| mat_scale(*w, g)).collect();
    let rhs = space.pullback(&weighted, &vec![ZERO; vol.len()]);
    let gram = space.gram(vol);
    let gram: DMatrix<f64> = gram.view((0, 0), (m, m)).into_owned();
    let coef = match SpdSolver::new(gram) {
        Some(s) => s.solve(&rhs[..m]),
        None => vec![0.0; m],
    };
    let proj = space.eval_cells(&FieldCoeffs { coeffs: coef, eps: None }).0;
    let (mut num, mut den) = (0.0, 0.0);
    for ((g, p), w) in field.iter().zip(&proj).zip(vol) {
        let diff = [[g[0][0] - p[0][0], g[0][1] - p[0][1]], [g[1][0] - p[1][0], g[1][1] - p[1][1]]];
        num += w * crate::linalg::frob_sq(&diff);
        den += w * crate::linalg::frob_sq(g);
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    /// Minimum of the variational-inequality left side over all tested directions.
    pub min_value: f64,
    /// Flat coordinate and sign attaining the minimum.
    pub worst_direction: Option<(usize, i8)>,
    pub directions_tested: usize,
    pub certified: bool,
}

/// Evaluates `int grad f*(phi).(psi - phi) + u.(div psi - div phi)` for
/// `psi = phi +- t e_k` over every flat coordinate `k`.
pub fn optimality_check(
    u: &Displacement,
    space: &TestSpace,
    f: &ConvexIntegrand,
    domain: &Domain,
    phi: &FieldCoeffs,
) -> Result<OptimalityReport> {
    let vol = volumes(domain);
    let z = phi.flatten();
    let (vals, _) = space.eval_cells(phi);
    let grads: Vec<Mat> = vals.iter().map(|v| f.grad_fstar_minnorm(v)).collect::<Result<_>>()?;
    let weighted: Vec<Mat> = grads.iter().zip(&vol).map(|(g, w)| mat_scale(*w, g)).collect();
    let a_part = space.pullback(&weighted, &vec![ZERO; vol.len()]);
    let b = linear_term(u, space, &vol);
    // directional derivative of -T along e_k
    let dir: Vec<f64> = a_part.iter().zip(&b).map(|(a, b)| a - b).collect();

    let bounded = matches!(f.family, Family::AbsoluteValue);
    let mut min_value = f64::INFINITY;
    let mut worst = None;
    let mut tested = 0;
    for k in 0..space.n_vars() {
        for sign in [1i8, -1] {
            let sg = sign as f64;
            let mut t = 1.0;
            if let Some(e) = space.eps_min() {
                if k == space.m() && sign < 0 {
                    t = (z[k] - e).max(0.0).min(1.0);
                }
            }
            if bounded && t > 0.0 {
                t = t.min(feasible_step(space, f, &vals, k, sg));
            }
            if t <= 0.0 {
                continue;
            }
            tested += 1;
            let v = t * sg * dir[k];
            if v < min_value {
                min_value = v;
                worst = Some((k, sign));
            }
        }
    }
    if tested == 0 {
        min_value = 0.0;
    }
    Ok(OptimalityReport { min_value, worst_direction: worst, directions_tested: tested, certified: min_value >= -1e-6 })
}

/// Largest `t <= 1` keeping `|phi(x_c) + t sign e_k(x_c)| <= s` at every cell.
fn feasible_step(space: &TestSpace, f: &ConvexIntegrand, vals: &[Mat], k: usize, sign: f64) -> f64 {
    let s = f.scale;
    let mut t = 1.0_f64;
    for (c, v) in vals.iter().enumerate() {
        let (e, _) = space.basis_cell(k, c);
        let ee = crate::linalg::frob_sq(&e);
        if ee == 0.0 {
            continue;
        }
        let ve = sign * crate::linalg::mat_dot(v, &e);
        let vv = crate::linalg::frob_sq(v);
        // |v + t e|^2 = vv + 2 t ve + t^2 ee <= s^2
        let disc = ve * ve - ee * (vv - s * s);
        if disc < 0.0 {
            return 0.0;
        }
        let root = (-ve + disc.sqrt()) / ee;
        t = t.min(root.max(0.0));
    }
    t
}
