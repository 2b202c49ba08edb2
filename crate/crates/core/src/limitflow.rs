//! Compressible solves with the penalized entropies `H_n` for increasing `n`,
//! compared against the incompressible solution.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dualsolver::{solve_dual, solve_dual_from, DualMode, DualPoint, Forcing, SolverOptions};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::integrands::{ConvexIntegrand, Entropy};
use crate::linalg::{norm, sub};
use crate::primal::{monotone_assignment, PrimalField};
use crate::pseudograd::{vsf_with, Displacement, VsfOptions};
use crate::testspace::TestSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub n_values: Vec<u32>,
    pub solver: SolverOptions,
    pub warm_start: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { n_values: vec![1, 4, 16, 64], solver: SolverOptions::default(), warm_start: true }
    }
}

/// Constants of the a priori bound `int n (beta_n - 1)^2 <= c0 |Omega|`
/// (the entropy minimum sits at `t = 1`, so `min H - H(1)` vanishes).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaBound {
    /// `V(u_bar) - int u_bar . F` for the discrete identity `u_bar`.
    pub r0: f64,
    /// `b |Omega| + r* |F|_1`.
    pub r1: f64,
    /// `int (-r* |div phi0| - f*(phi0))` at the base point of the space.
    pub r2: f64,
    pub c0: f64,
}

impl BetaBound {
    /// Upper bound on `|beta_n - 1|_{L2}`.
    pub fn l2_bound(&self, n: u32, omega_measure: f64) -> f64 {
        (self.c0.max(0.0) * omega_measure / n as f64).sqrt()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepEntry {
    pub n: u32,
    pub point: DualPoint,
    pub primal: PrimalField,
    pub j_value: f64,
    pub i_value: f64,
    pub beta_l2: f64,
    pub beta_bound: f64,
    pub within_bound: bool,
    pub l1_to_baseline: f64,
    pub relative_gap: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub n_values: Vec<u32>,
    pub entries: Vec<SweepEntry>,
    pub baseline_point: DualPoint,
    pub baseline_primal: PrimalField,
    pub baseline_i: f64,
    pub baseline_converged: bool,
    pub bound: BetaBound,
    /// `|beta_n - 1|` ratios between consecutive `n`.
    pub ratios: Vec<f64>,
    /// `J_0 <= J_n` for every `n`, up to solver tolerance.
    pub dual_monotone: bool,
    /// `-R1 <= -J_n <= R0` for every `n`.
    pub within_r_bounds: bool,
    /// Every sub-solve converged.
    pub all_converged: bool,
}

/// `sum_c vol_c |u_c - v_c|`.
pub fn l1_distance(domain: &Domain, u: &Displacement, v: &Displacement) -> f64 {
    domain.cells.iter().zip(u.values.iter().zip(&v.values)).map(|(c, (a, b))| c.volume * norm(sub(*a, *b))).sum()
}

/// `|beta - 1|_{L2}`; zero without `beta`.
pub fn beta_deviation(domain: &Domain, beta: Option<&[f64]>) -> f64 {
    beta.map_or(0.0, |b| domain.cells.iter().zip(b).map(|(c, b)| c.volume * (b - 1.0).powi(2)).sum::<f64>().sqrt())
}

pub fn beta_bound(domain: &Domain, space: &TestSpace, f: &ConvexIntegrand, forcing: &Forcing) -> Result<BetaBound> {
    let ubar = monotone_assignment(domain);
    let v = vsf_with(&ubar, space, f, domain, &VsfOptions { tol: 1e-11, ..Default::default() })?.value;
    let force: f64 = domain
        .cells
        .iter()
        .enumerate()
        .map(|(c, cell)| cell.volume * crate::linalg::dot(forcing.values[c], ubar.values[c]))
        .sum();
    let r0 = v - force;
    let f1 = forcing.l1_norm(domain);
    let r1 = f.growth().b * domain.omega_measure() + domain.r_star * f1;
    let (vals, divs) = space.eval_cells(&space.zero());
    let r2: f64 = domain
        .cells
        .iter()
        .enumerate()
        .map(|(c, cell)| cell.volume * (-domain.r_star * norm(divs[c]) - f.f_conj(&vals[c])))
        .sum();
    let c0 = (r0 - r2 + domain.r_star * f1) / domain.omega_measure();
    Ok(BetaBound { r0, r1, r2, c0 })
}

pub fn limit_sweep(
    forcing: &Forcing,
    domain: &Domain,
    space: &TestSpace,
    f: &ConvexIntegrand,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    if (domain.omega_measure() - domain.lambda_measure()).abs() > 1e-12 * domain.omega_measure()
        || domain.omega().radius != domain.lambda().radius
    {
        return Err(Error::InvalidDomain("limit sweeps need Omega = Lambda".into()));
    }
    if opts.n_values.is_empty() || opts.n_values.windows(2).any(|w| w[0] >= w[1]) || opts.n_values[0] == 0 {
        return Err(Error::Config(vec!["n values must be positive and strictly increasing".into()]));
    }
    let bound = beta_bound(domain, space, f, forcing)?;
    let base = solve_dual(DualMode::Incompressible, forcing, domain, space, f, &opts.solver)?;
    let tol = opts.solver.gap_tol;

    let mut entries: Vec<SweepEntry> = Vec::new();
    for &n in &opts.n_values {
        let mode = DualMode::compressible(Entropy::penalized(n));
        let out = match entries.last().filter(|_| opts.warm_start) {
            Some(prev) => solve_dual_from(
                mode,
                forcing,
                domain,
                space,
                f,
                &opts.solver,
                Some((&prev.point.potential, &prev.point.phi)),
            )?,
            None => solve_dual(mode, forcing, domain, space, f, &opts.solver)?,
        };
        let beta_l2 = beta_deviation(domain, out.primal.beta.as_deref());
        let beta_bound = bound.l2_bound(n, domain.omega_measure());
        entries.push(SweepEntry {
            n,
            j_value: out.point.j_value,
            i_value: out.primal.i_value,
            beta_l2,
            beta_bound,
            within_bound: beta_l2 <= beta_bound * (1.0 + 1e-9),
            l1_to_baseline: l1_distance(domain, &out.primal.u, &base.primal.u),
            relative_gap: out.relative_gap,
            converged: out.converged,
            iterations: out.iterations,
            point: out.point,
            primal: out.primal,
        });
    }
    let ratios = entries.windows(2).map(|w| w[1].beta_l2 / w[0].beta_l2.max(1e-300)).collect();
    let slack = |j: f64| tol * (1.0 + j.abs());
    let j0 = base.point.j_value;
    let dual_monotone = entries.iter().all(|e| j0 <= e.j_value + slack(e.j_value));
    let within_r_bounds =
        entries.iter().all(|e| -e.j_value <= bound.r0 + slack(e.j_value) && -e.j_value >= -bound.r1 - slack(e.j_value));
    let all_converged = base.converged && entries.iter().all(|e| e.converged);
    Ok(SweepResult {
        n_values: opts.n_values.clone(),
        entries,
        baseline_i: base.primal.i_value,
        baseline_point: base.point,
        baseline_primal: base.primal,
        baseline_converged: base.converged,
        bound,
        ratios,
        dual_monotone,
        within_r_bounds,
        all_converged,
    })
}

/// Summary CSV: `n,J_n,I_n,beta_l2,l1_to_baseline,tie_fraction`.
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut s = String::from("n,J_n,I_n,beta_l2,l1_to_baseline,tie_fraction\n");
    for e in &result.entries {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e}",
            e.n, e.j_value, e.i_value, e.beta_l2, e.l1_to_baseline, e.primal.tie_fraction
        );
    }
    s
}
