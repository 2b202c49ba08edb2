//! Minimization of the dual functional
//!
//! `J(k, l, phi) = int_Omega k(F + div phi) + int_Lambda l + int_Omega f*(phi)`
//!
//! over lattice values of `l` and coefficients of `phi`, with `k = l^#`
//! (compressible) or `k = l^&` (incompressible) always induced from `l`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::integrands::{ConvexIntegrand, Entropy, Family};
use crate::linalg::{mat_scale, norm, Mat, Point, ZERO};
use crate::primal::{self, PrimalField, RecoveryOptions};
use crate::testspace::{FieldCoeffs, TestSpace};
use crate::transforms::{amp, sharp, tighten_pair, ConjugateMajorant, Potential};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DualMode {
    Compressible { entropy: Entropy },
    Incompressible,
}

impl DualMode {
    pub fn compressible(entropy: Entropy) -> Self {
        DualMode::Compressible { entropy }
    }

    pub fn entropy(&self) -> Option<&Entropy> {
        match self {
            DualMode::Compressible { entropy } => Some(entropy),
            DualMode::Incompressible => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingKind {
    Smooth,
    CountableRange,
}

/// Cell samples of the force `F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forcing {
    pub values: Vec<Point>,
    pub kind: ForcingKind,
    pub descriptor: Option<String>,
}

impl Forcing {
    pub fn from_fn(domain: &Domain, kind: ForcingKind, descriptor: &str, g: impl Fn(Point) -> Point) -> Self {
        Self {
            values: domain.cells.iter().map(|c| g(c.center)).collect(),
            kind,
            descriptor: Some(descriptor.to_string()),
        }
    }

    pub fn zero(domain: &Domain) -> Self {
        Self::from_fn(domain, ForcingKind::CountableRange, "zero", |_| ZERO)
    }

    /// `F(x) = a x`.
    pub fn linear(domain: &Domain, a: f64) -> Self {
        Self::from_fn(domain, ForcingKind::Smooth, &format!("linear(a={a})"), |x| [a * x[0], a * x[1]])
    }

    /// `F(x) = a |x|^2 x`.
    pub fn cubic(domain: &Domain, a: f64) -> Self {
        Self::from_fn(domain, ForcingKind::Smooth, &format!("cubic(a={a})"), |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            [a * r2 * x[0], a * r2 * x[1]]
        })
    }

    /// `levels` constant values: bins of `x` in one dimension, angular sectors on the disc.
    pub fn piecewise_constant(domain: &Domain, levels: usize, a: f64) -> Self {
        let rho = domain.omega().radius;
        let k = levels.max(1);
        let desc = format!("piecewise_constant(levels={k}, a={a})");
        if domain.dim() == 1 {
            Self::from_fn(domain, ForcingKind::CountableRange, &desc, |x| {
                let bin = (((x[0] + rho) / (2.0 * rho)) * k as f64).floor().clamp(0.0, (k - 1) as f64);
                let center = -rho + (bin + 0.5) * 2.0 * rho / k as f64;
                [a * center, 0.0]
            })
        } else {
            Self::from_fn(domain, ForcingKind::CountableRange, &desc, |x| {
                let th = x[1].atan2(x[0]).rem_euclid(2.0 * std::f64::consts::PI);
                let bin = (th / (2.0 * std::f64::consts::PI) * k as f64).floor().min((k - 1) as f64);
                let mid = (bin + 0.5) * 2.0 * std::f64::consts::PI / k as f64;
                [a * 0.5 * rho * mid.cos(), a * 0.5 * rho * mid.sin()]
            })
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| norm(*v)).fold(0.0, f64::max)
    }

    pub fn l1_norm(&self, domain: &Domain) -> f64 {
        self.values.iter().zip(&domain.cells).map(|(v, c)| c.volume * norm(*v)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub potential: Potential,
    pub phi: FieldCoeffs,
    pub k: ConjugateMajorant,
    pub j_value: f64,
    pub mode: DualMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subgradient {
    pub l: Vec<f64>,
    /// Coefficients followed by `eps` when present.
    pub phi: Vec<f64>,
}

/// Precomputed data for evaluating `J` and its smoothed versions.
pub struct Evaluator<'a> {
    domain: &'a Domain,
    space: &'a TestSpace,
    f: &'a ConvexIntegrand,
    forcing: &'a Forcing,
    mode: DualMode,
    nodes: Vec<Point>,
}

pub struct Evaluation {
    pub value: f64,
    pub grad_l: Vec<f64>,
    pub grad_z: Vec<f64>,
}

struct CellOut {
    value: f64,
    ybar: Point,
    weights: Vec<(usize, f64)>,
}

const PAR_THRESHOLD: usize = 16_384;

impl<'a> Evaluator<'a> {
    pub fn new(
        mode: DualMode,
        forcing: &'a Forcing,
        domain: &'a Domain,
        space: &'a TestSpace,
        f: &'a ConvexIntegrand,
    ) -> Result<Self> {
        if matches!(f.family, Family::AbsoluteValue) {
            return Err(Error::Unsupported(
                "dual solves need a power-family integrand (f* finite everywhere)".into(),
            ));
        }
        if forcing.values.len() != domain.n_cells() {
            return Err(Error::Dimension("forcing does not match the cell grid".into()));
        }
        Ok(Self { domain, space, f, forcing, mode, nodes: domain.nodes.iter().map(|n| n.point).collect() })
    }

    fn offsets(&self, l: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match self.mode {
            DualMode::Compressible { entropy } => {
                let mut o = Vec::with_capacity(l.len());
                let mut d = Vec::with_capacity(l.len());
                for &x in l {
                    let t = entropy.derivative_inverse(-x)?;
                    o.push(-x * t - entropy.value(t)?);
                    d.push(-t);
                }
                Ok((o, d))
            }
            DualMode::Incompressible => Ok((l.iter().map(|x| -x).collect(), vec![-1.0; l.len()])),
        }
    }

    /// `J_tau` (softmax at temperature `tau`, exact max when `tau == 0`) with its gradient.
    pub fn eval(&self, l: &[f64], z: &[f64], tau: f64) -> Result<Evaluation> {
        let (offsets, dodl) = self.offsets(l)?;
        let phi = self.space.from_flat(z);
        let (vals, divs) = self.space.eval_cells(&phi);
        let nodes = &self.nodes;
        let cell = |c: usize| -> CellOut {
            let v = [self.forcing.values[c][0] + divs[c][0], self.forcing.values[c][1] + divs[c][1]];
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            let pieces: Vec<f64> = nodes
                .iter()
                .zip(&offsets)
                .enumerate()
                .map(|(j, (y, o))| {
                    let p = y[0] * v[0] + y[1] * v[1] + o;
                    if p > best {
                        best = p;
                        arg = j;
                    }
                    p
                })
                .collect();
            if tau <= 0.0 {
                return CellOut { value: best, ybar: nodes[arg], weights: vec![(arg, 1.0)] };
            }
            let mut z = 0.0;
            let mut w: Vec<(usize, f64)> = Vec::new();
            for (j, p) in pieces.iter().enumerate() {
                let e = ((p - best) / tau).exp();
                if e > 1e-300 {
                    z += e;
                    w.push((j, e));
                }
            }
            let mut ybar = ZERO;
            for (j, e) in w.iter_mut() {
                *e /= z;
                ybar[0] += *e * nodes[*j][0];
                ybar[1] += *e * nodes[*j][1];
            }
            CellOut { value: best + tau * z.ln(), ybar, weights: w }
        };
        let nc = self.domain.n_cells();
        let outs: Vec<CellOut> = if nc * nodes.len() >= PAR_THRESHOLD {
            (0..nc).into_par_iter().map(cell).collect()
        } else {
            (0..nc).map(cell).collect()
        };

        let mut value = 0.0;
        let mut dodj = vec![0.0; nodes.len()];
        let mut a: Vec<Mat> = Vec::with_capacity(nc);
        let mut b: Vec<Point> = Vec::with_capacity(nc);
        for (c, out) in outs.iter().enumerate() {
            let vol = self.domain.cells[c].volume;
            let fs = self.f.f_conj(&vals[c]);
            value += vol * (out.value + fs);
            for &(j, w) in &out.weights {
                dodj[j] += vol * w;
            }
            b.push([vol * out.ybar[0], vol * out.ybar[1]]);
            a.push(mat_scale(vol, &self.f.grad_fstar_minnorm(&vals[c])?));
        }
        let mut grad_l = vec![0.0; nodes.len()];
        for (j, node) in self.domain.nodes.iter().enumerate() {
            value += node.weight * l[j];
            grad_l[j] = node.weight + dodj[j] * dodl[j];
        }
        let grad_z = self.space.pullback(&a, &b);
        Ok(Evaluation { value, grad_l, grad_z })
    }

    pub fn majorant(&self, l: &Potential) -> Result<ConjugateMajorant> {
        match self.mode {
            DualMode::Compressible { entropy } => sharp(l, &entropy, self.domain),
            DualMode::Incompressible => Ok(amp(l, self.domain)),
        }
    }

    pub fn point(&self, l: &[f64], z: &[f64]) -> Result<DualPoint> {
        let potential = Potential { values: l.to_vec() };
        let k = self.majorant(&potential)?;
        let j_value = self.eval(l, z, 0.0)?.value;
        Ok(DualPoint { potential, phi: self.space.from_flat(z), k, j_value, mode: self.mode })
    }
}

/// Exact `J` with a subgradient (argmax selection, smallest index on ties).
pub fn assemble_j(
    point: &DualPoint,
    forcing: &Forcing,
    domain: &Domain,
    space: &TestSpace,
    f: &ConvexIntegrand,
) -> Result<(f64, Subgradient)> {
    let ev = Evaluator::new(point.mode, forcing, domain, space, f)?;
    let out = ev.eval(&point.potential.values, &point.phi.flatten(), 0.0)?;
    Ok((out.value, Subgradient { l: out.grad_l, phi: out.grad_z }))
}

/// Smoothed `J_tau` with its gradient, for checks and custom drivers.
pub fn assemble_j_smoothed(
    point: &DualPoint,
    forcing: &Forcing,
    domain: &Domain,
    space: &TestSpace,
    f: &ConvexIntegrand,
    tau: f64,
) -> Result<(f64, Subgradient)> {
    let ev = Evaluator::new(point.mode, forcing, domain, space, f)?;
    let out = ev.eval(&point.potential.values, &point.phi.flatten(), tau)?;
    Ok((out.value, Subgradient { l: out.grad_l, phi: out.grad_z }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Multipliers of the temperature scale for the smoothing stages.
    pub schedule: Vec<f64>,
    pub max_iter: usize,
    pub stage_iter: usize,
    pub stall_window: usize,
    pub stall_rel: f64,
    pub polyak_slack: f64,
    pub gap_tol: f64,
    pub recovery: RecoveryOptions,
    pub seed: u64,
    pub init: Init,
    pub trace_every: usize,
    pub lbfgs_memory: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            schedule: vec![1.0, 0.3, 0.1, 0.03, 0.01],
            max_iter: 50_000,
            stage_iter: 4_000,
            stall_window: 200,
            stall_rel: 1e-9,
            polyak_slack: 1e-4,
            gap_tol: 1e-3,
            recovery: RecoveryOptions::default(),
            seed: 0,
            init: Init::Zero,
            trace_every: 0,
            lbfgs_memory: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub j: f64,
    pub gap_estimate: f64,
    pub s_l: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub point: DualPoint,
    pub primal: PrimalField,
    pub converged: bool,
    pub iterations: usize,
    pub relative_gap: f64,
    pub trace: Vec<TraceRow>,
    pub s_l_min: f64,
    pub s_l_max: f64,
    /// Largest `J(tighten(p)) - J(p)` observed at trace points (should be `<= 0`).
    pub tightening_increase: f64,
    /// Smallest margin of `int k(F + div phi) - |Omega| H*(s_l) + r* |F|_1` at trace points.
    pub lower_bound_margin: f64,
    pub temperature_scale: f64,
}

struct State {
    l: Vec<f64>,
    z: Vec<f64>,
}

impl State {
    fn flat(&self) -> Vec<f64> {
        let mut v = self.l.clone();
        v.extend_from_slice(&self.z);
        v
    }

    fn from_flat(v: &[f64], nl: usize) -> Self {
        Self { l: v[..nl].to_vec(), z: v[nl..].to_vec() }
    }
}

struct Problem<'a> {
    ev: Evaluator<'a>,
    nl: usize,
    eps_index: Option<usize>,
    eps_min: f64,
    incompressible: bool,
}

impl Problem<'_> {
    fn project(&self, x: &mut [f64]) {
        if let Some(i) = self.eps_index {
            if x[i] < self.eps_min {
                x[i] = self.eps_min;
            }
        }
        if self.incompressible {
            let m = x[..self.nl].iter().copied().fold(f64::INFINITY, f64::min);
            for v in &mut x[..self.nl] {
                *v -= m;
            }
        }
    }

    fn eval(&self, x: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
        let e = self.ev.eval(&x[..self.nl], &x[self.nl..], tau)?;
        let mut g = e.grad_l;
        g.extend(e.grad_z);
        Ok((e.value, g))
    }

    /// Gradient with the `eps` component removed when the bound is active and binding.
    fn free(&self, x: &[f64], g: &mut [f64]) {
        if let Some(i) = self.eps_index {
            if x[i] <= self.eps_min && g[i] > 0.0 {
                g[i] = 0.0;
            }
        }
    }
}

struct Lbfgs {
    mem: usize,
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

impl Lbfgs {
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        let rho: Vec<f64> = (0..k).map(|i| 1.0 / dotv(&self.s[i], &self.y[i])).collect();
        for i in (0..k).rev() {
            alpha[i] = rho[i] * dotv(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        if k > 0 {
            let gamma = dotv(&self.s[k - 1], &self.y[k - 1]) / dotv(&self.y[k - 1], &self.y[k - 1]);
            for qj in q.iter_mut() {
                *qj *= gamma;
            }
        }
        for i in 0..k {
            let beta = rho[i] * dotv(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q.iter().map(|x| -x).collect()
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dotv(&s, &y);
        if sy > 1e-14 * (dotv(&s, &s) * dotv(&y, &y)).sqrt() && sy > 0.0 {
            if self.s.len() == self.mem {
                self.s.remove(0);
                self.y.remove(0);
            }
            self.s.push(s);
            self.y.push(y);
        }
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
    }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Temperature scale: typical spread of the affine pieces at the forcing.
pub fn temperature_scale(forcing: &Forcing, domain: &Domain) -> f64 {
    0.5 * domain.lambda_diameter() * (forcing.sup_norm() + domain.omega().radius)
}

pub fn initial_state(space: &TestSpace, domain: &Domain, opts: &SolverOptions, scale: f64) -> (Vec<f64>, Vec<f64>) {
    let nl = domain.n_nodes();
    let mut z = space.zero().flatten();
    let mut l = vec![0.0; nl];
    if opts.init == Init::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for v in l.iter_mut() {
            *v = rng.gen_range(-0.5..0.5) * scale;
        }
        let m = space.m();
        for v in z[..m].iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        if let Some(e) = space.eps_min() {
            z[m] = e + rng.gen_range(0.0..0.5);
        }
    }
    (l, z)
}

/// Minimizes `J` from the configured initialization.
pub fn solve_dual(
    mode: DualMode,
    forcing: &Forcing,
    domain: &Domain,
    space: &TestSpace,
    f: &ConvexIntegrand,
    opts: &SolverOptions,
) -> Result<SolveOutcome> {
    solve_dual_from(mode, forcing, domain, space, f, opts, None)
}

/// As [`solve_dual`], optionally warm-started from `(l, phi)`.
pub fn solve_dual_from(
    mode: DualMode,
    forcing: &Forcing,
    domain: &Domain,
    space: &TestSpace,
    f: &ConvexIntegrand,
    opts: &SolverOptions,
    warm: Option<(&Potential, &FieldCoeffs)>,
) -> Result<SolveOutcome> {
    let ev = Evaluator::new(mode, forcing, domain, space, f)?;
    let nl = domain.n_nodes();
    let scale = temperature_scale(forcing, domain);
    let (l0, z0) = match warm {
        Some((l, phi)) => (l.values.clone(), space.embed(phi).flatten()),
        None => initial_state(space, domain, opts, scale),
    };
    let prob = Problem {
        ev,
        nl,
        eps_index: space.eps_min().map(|_| nl + space.m()),
        eps_min: space.eps_min().unwrap_or(0.0),
        incompressible: mode.entropy().is_none(),
    };

    let mut x = State { l: l0, z: z0 }.flat();
    prob.project(&mut x);
    let mut iterations = 0usize;
    let mut trace = Vec::new();
    let mut diag = Diagnostics::default();
    let (mut best_j, _) = prob.eval(&x, 0.0)?;
    let mut best_x = x.clone();
    diag.observe(&prob, domain, forcing, &x, best_j)?;

    let budget_a = opts.max_iter / 2;
    for &mult in &opts.schedule {
        let tau = mult * scale;
        let mut lb = Lbfgs { mem: opts.lbfgs_memory, s: Vec::new(), y: Vec::new() };
        let (mut fx, mut g) = prob.eval(&x, tau)?;
        prob.free(&x, &mut g);
        let mut history: Vec<f64> = Vec::new();
        let mut stage = 0;
        while stage < opts.stage_iter && iterations < budget_a {
            stage += 1;
            iterations += 1;
            let mut d = lb.direction(&g);
            if let Some(i) = prob.eps_index {
                if x[i] <= prob.eps_min && d[i] < 0.0 {
                    d[i] = 0.0;
                }
            }
            let mut slope = dotv(&g, &d);
            if !(slope < 0.0) {
                lb.clear();
                d = g.iter().map(|v| -v).collect();
                slope = dotv(&g, &d);
            }
            let mut alpha = if lb.s.is_empty() { (0.05 * scale / inf(&d).max(1e-300)).min(1.0) } else { 1.0 };
            let mut accepted = None;
            for _ in 0..50 {
                let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                prob.project(&mut trial);
                let (ft, gt) = prob.eval(&trial, tau)?;
                let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                if ft <= fx + 1e-4 * dotv(&g, &moved) {
                    accepted = Some((trial, ft, gt, moved));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((xn, fnew, mut gn, moved)) = accepted else { break };
            prob.free(&xn, &mut gn);
            let ydiff: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            lb.push(moved, ydiff);
            x = xn;
            fx = fnew;
            g = gn;
            history.push(fx);
            if opts.trace_every > 0 && iterations % opts.trace_every == 0 {
                let (jx, _) = prob.eval(&x, 0.0)?;
                trace.push(trace_row(&prob, domain, space, f, forcing, opts, &x, jx, iterations, alpha)?);
                diag.observe(&prob, domain, forcing, &x, jx)?;
            }
            if inf(&g) <= 1e-13 * (1.0 + fx.abs()) {
                break;
            }
            let w = 20;
            if history.len() > w {
                let old = history[history.len() - 1 - w];
                if (old - fx).abs() <= 1e-13 * (1.0 + fx.abs()) {
                    break;
                }
            }
        }
        let (jx, _) = prob.eval(&x, 0.0)?;
        diag.observe(&prob, domain, forcing, &x, jx)?;
        if jx < best_j {
            best_j = jx;
            best_x = x.clone();
        }
    }

    // phase B: exact nonsmooth J, Polyak steps toward a moving level
    x = best_x.clone();
    let mut slack = opts.polyak_slack * (1.0 + best_j.abs());
    let mut since_improve = 0usize;
    let mut window_ref = best_j;
    let mut window_count = 0usize;
    while iterations < opts.max_iter {
        iterations += 1;
        let (jx, mut g) = prob.eval(&x, 0.0)?;
        prob.free(&x, &mut g);
        if jx < best_j {
            best_j = jx;
            best_x = x.clone();
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve >= 50 {
                slack *= 0.5;
                since_improve = 0;
                x = best_x.clone();
                continue;
            }
        }
        let gg = dotv(&g, &g);
        if gg == 0.0 {
            break;
        }
        let step = (jx - best_j + slack) / gg;
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= step * gi;
        }
        prob.project(&mut x);
        if opts.trace_every > 0 && iterations % opts.trace_every == 0 {
            trace.push(trace_row(&prob, domain, space, f, forcing, opts, &x, jx, iterations, step)?);
            diag.observe(&prob, domain, forcing, &x, jx)?;
        }
        window_count += 1;
        if window_count >= opts.stall_window {
            if window_ref - best_j <= opts.stall_rel * (1.0 + best_j.abs()) {
                break;
            }
            window_ref = best_j;
            window_count = 0;
        }
    }

    let state = State::from_flat(&best_x, nl);
    let raw = prob.ev.point(&state.l, &state.z)?;
    let point = tighten_point(&prob.ev, &raw, domain)?;
    diag.tightening_increase = diag.tightening_increase.max(point.j_value - raw.j_value);
    diag.observe(&prob, domain, forcing, &best_x, point.j_value)?;
    let recovered = primal::recover(&point, forcing, domain, space, f, &opts.recovery)?;
    let relative_gap = recovered.gap.abs() / (1.0 + point.j_value.abs());
    Ok(SolveOutcome {
        converged: relative_gap <= opts.gap_tol,
        point,
        primal: recovered,
        iterations,
        relative_gap,
        trace,
        s_l_min: diag.s_l_min,
        s_l_max: diag.s_l_max,
        tightening_increase: diag.tightening_increase,
        lower_bound_margin: diag.lower_bound_margin,
        temperature_scale: scale,
    })
}

/// Replaces `l` by the tightened potential, keeping `k` (which is unchanged by construction).
pub fn tighten_point(ev: &Evaluator, p: &DualPoint, domain: &Domain) -> Result<DualPoint> {
    let (_, l2) = tighten_pair(&p.potential, p.mode.entropy(), domain)?;
    let z = p.phi.flatten();
    let tightened = ev.point(&l2.values, &z)?;
    if tightened.j_value <= p.j_value + 1e-10 * (1.0 + p.j_value.abs()) {
        Ok(tightened)
    } else {
        Ok(p.clone())
    }
}

#[derive(Default)]
struct Diagnostics {
    s_l_min: f64,
    s_l_max: f64,
    tightening_increase: f64,
    lower_bound_margin: f64,
    seen: bool,
}

impl Diagnostics {
    fn observe(&mut self, prob: &Problem, domain: &Domain, forcing: &Forcing, x: &[f64], j: f64) -> Result<()> {
        let l = &x[..prob.nl];
        let s_l = -l.iter().copied().fold(f64::INFINITY, f64::min);
        if !self.seen {
            self.s_l_min = s_l;
            self.s_l_max = s_l;
            self.lower_bound_margin = f64::INFINITY;
            self.tightening_increase = f64::NEG_INFINITY;
            self.seen = true;
        }
        self.s_l_min = self.s_l_min.min(s_l);
        self.s_l_max = self.s_l_max.max(s_l);
        if let DualMode::Compressible { entropy } = prob.ev.mode {
            let lam: f64 = domain.nodes.iter().zip(l).map(|(n, v)| n.weight * v).sum();
            let phi = prob.ev.space.from_flat(&x[prob.nl..]);
            let (vals, _) = prob.ev.space.eval_cells(&phi);
            let fs: f64 = vals.iter().zip(&domain.cells).map(|(v, c)| c.volume * prob.ev.f.f_conj(v)).sum();
            let kint = j - lam - fs;
            let bound = domain.omega_measure() * entropy.conjugate(s_l)? - domain.r_star * forcing.l1_norm(domain);
            self.lower_bound_margin = self.lower_bound_margin.min(kint - bound);
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn trace_row(
    prob: &Problem,
    domain: &Domain,
    space: &TestSpace,
    f: &ConvexIntegrand,
    forcing: &Forcing,
    opts: &SolverOptions,
    x: &[f64],
    j: f64,
    iter: usize,
    step: f64,
) -> Result<TraceRow> {
    let st = State::from_flat(x, prob.nl);
    let p = prob.ev.point(&st.l, &st.z)?;
    let rec = primal::recover(&p, forcing, domain, space, f, &RecoveryOptions { polish_budget: 0, ..opts.recovery })?;
    let s_l = p.potential.s_l();
    Ok(TraceRow { iter, j, gap_estimate: rec.gap, s_l, step })
}

/// Rebuilds the induced majorant and value for fresh `(l, phi)`.
pub fn make_point(
    mode: DualMode,
    l: Potential,
    phi: FieldCoeffs,
    forcing: &Forcing,
    domain: &Domain,
    space: &TestSpace,
    f: &ConvexIntegrand,
) -> Result<DualPoint> {
    let ev = Evaluator::new(mode, forcing, domain, space, f)?;
    ev.point(&l.values, &phi.flatten())
}
