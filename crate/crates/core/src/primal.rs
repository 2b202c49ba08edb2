//! Recovery of `(u, beta)` from a dual point through `u = grad k(F + div phi)`
//! and `beta = (H')^{-1}(-l(u))`, with feasibility and duality diagnostics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dualsolver::{DualMode, DualPoint, Forcing};
use crate::error::Result;
use crate::geometry::Domain;
use crate::integrands::{ConvexIntegrand, Entropy};
use crate::linalg::{dot, Point};
use crate::pseudograd::{vsf_with, Displacement, Provenance, VsfOptions};
use crate::testspace::TestSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalField {
    pub u: Displacement,
    /// Absent in the incompressible mode, where `beta = 1`.
    pub beta: Option<Vec<f64>>,
    /// Lattice node chosen at every cell.
    pub node_index: Vec<usize>,
    pub i_value: f64,
    pub vsf_value: f64,
    pub gap: f64,
    /// `sum_j |l_j| |w_j - m_j|` with `m_j` the mass sent to node `j`;
    /// weak duality gives `gap >= -mass_defect`.
    pub mass_defect: f64,
    pub pushforward_errors: Vec<(String, f64)>,
    pub tie_count: usize,
    pub tie_fraction: f64,
    pub selection: Selection,
    /// Cells placed by the capacitated matching.
    pub matched: usize,
}

/// How a node is picked from the cellwise subdifferential of `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Smallest index among the maximizing pieces.
    FirstIndex,
    /// Mass-balanced matching inside the candidate sets, then swap descent on `I`.
    Balanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    /// Relative tolerance for counting a cell as tied.
    pub tie_tol: f64,
    /// Relative tolerance defining the candidate nodes of a cell.
    pub select_tol: f64,
    /// Maximum number of `I` evaluations spent on swap descent.
    pub polish_budget: usize,
    /// Matchings tried from shuffled cell orders; the best polished one is kept.
    pub restarts: usize,
    pub seed: u64,
    pub strategy: Selection,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self { tie_tol: 1e-9, select_tol: 1e-6, polish_budget: 20_000, restarts: 8, seed: 0, strategy: Selection::Balanced }
    }
}

impl PrimalField {
    pub fn max_pushforward_error(&self) -> f64 {
        self.pushforward_errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn min_beta(&self) -> f64 {
        self.beta.as_ref().map(|b| b.iter().copied().fold(f64::INFINITY, f64::min)).unwrap_or(1.0)
    }
}

/// Cellwise argmax node of `k` at `F_c + div phi(x_c)`, with the number of tied cells.
pub fn recover_u(
    point: &DualPoint,
    forcing: &Forcing,
    space: &TestSpace,
    tie_tol: f64,
) -> (Displacement, Vec<usize>, usize) {
    let (_, divs) = space.eval_cells(&point.phi);
    let mut ties = 0;
    let mut idx = Vec::with_capacity(divs.len());
    let values = divs
        .iter()
        .zip(&forcing.values)
        .map(|(d, f)| {
            let a = point.k.argmax([f[0] + d[0], f[1] + d[1]], tie_tol);
            if a.multiplicity > 1 {
                ties += 1;
            }
            idx.push(a.index);
            point.k.slopes[a.index]
        })
        .collect();
    (Displacement { values, provenance: Provenance::Recovered }, idx, ties)
}

/// `beta_c = (H')^{-1}(-l(u_c))`; `None` in the incompressible mode.
pub fn recover_beta(point: &DualPoint, node_index: &[usize]) -> Result<Option<Vec<f64>>> {
    match point.mode {
        DualMode::Compressible { entropy } => node_index
            .iter()
            .map(|&j| entropy.derivative_inverse(-point.potential.values[j]))
            .collect::<Result<Vec<_>>>()
            .map(Some),
        DualMode::Incompressible => Ok(None),
    }
}

/// `I(u, beta) = V_S^f(u) + int (H(beta) - F.u)`, or `I_0` without `beta`.
/// Returns `(I, V_S^f(u))`.
pub fn primal_value(
    u: &Displacement,
    beta: Option<&[f64]>,
    entropy: Option<&Entropy>,
    domain: &Domain,
    space: &TestSpace,
    f: &ConvexIntegrand,
    forcing: &Forcing,
) -> Result<(f64, f64)> {
    let v = vsf_with(u, space, f, domain, &VsfOptions { tol: 1e-11, ..Default::default() })?.value;
    let mut rest = 0.0;
    for (c, cell) in domain.cells.iter().enumerate() {
        let mut term = -dot(forcing.values[c], u.values[c]);
        if let (Some(b), Some(h)) = (beta, entropy) {
            term += h.value(b[c])?;
        }
        rest += cell.volume * term;
    }
    Ok((v + rest, v))
}

pub type TestFunction = (String, Box<dyn Fn(Point) -> f64>);

/// Coordinate monomials up to degree two and four radial bumps centered in `Lambda`.
pub fn test_panel(domain: &Domain) -> Vec<TestFunction> {
    let rho = domain.lambda().radius;
    let mut out: Vec<TestFunction> = vec![("one".into(), Box::new(|_| 1.0))];
    let dims = domain.dim();
    for i in 0..dims {
        out.push((format!("x{}", i + 1), Box::new(move |y: Point| y[i])));
    }
    for i in 0..dims {
        for j in i..dims {
            out.push((format!("x{}x{}", i + 1, j + 1), Box::new(move |y: Point| y[i] * y[j])));
        }
    }
    let centers: Vec<Point> = if dims == 1 {
        vec![[-0.75 * rho, 0.0], [-0.25 * rho, 0.0], [0.25 * rho, 0.0], [0.75 * rho, 0.0]]
    } else {
        vec![[0.5 * rho, 0.0], [0.0, 0.5 * rho], [-0.5 * rho, 0.0], [0.0, -0.5 * rho]]
    };
    let r = 0.5 * rho;
    for (k, c) in centers.into_iter().enumerate() {
        out.push((
            format!("bump{}", k + 1),
            Box::new(move |y: Point| {
                let d2 = ((y[0] - c[0]).powi(2) + (y[1] - c[1]).powi(2)) / (r * r);
                if d2 >= 1.0 {
                    0.0
                } else {
                    (1.0 - d2).powi(2)
                }
            }),
        ));
    }
    out
}

/// `|sum_c l(u_c) beta_c vol_c - sum_y w_y l(y)| / |l|_inf` over the test panel.
pub fn pushforward_error(u: &Displacement, beta: Option<&[f64]>, domain: &Domain) -> Vec<(String, f64)> {
    test_panel(domain)
        .into_iter()
        .map(|(name, l)| {
            let lhs: f64 = domain
                .cells
                .iter()
                .enumerate()
                .map(|(c, cell)| cell.volume * beta.map_or(1.0, |b| b[c]) * l(u.values[c]))
                .sum();
            let rhs: f64 = domain.nodes.iter().map(|n| n.weight * l(n.point)).sum();
            let sup = domain.nodes.iter().map(|n| l(n.point).abs()).fold(0.0, f64::max).max(1e-300);
            (name, (lhs - rhs).abs() / sup)
        })
        .collect()
}

/// Full recovery with diagnostics; `gap = I + J`.
pub fn recover(
    point: &DualPoint,
    forcing: &Forcing,
    domain: &Domain,
    space: &TestSpace,
    f: &ConvexIntegrand,
    opts: &RecoveryOptions,
) -> Result<PrimalField> {
    let (_, first, ties) = recover_u(point, forcing, space, opts.tie_tol);
    let node_beta = match point.mode {
        DualMode::Compressible { entropy } => Some(
            point.potential.values.iter().map(|l| entropy.derivative_inverse(-l)).collect::<Result<Vec<_>>>()?,
        ),
        DualMode::Incompressible => None,
    };
    let caps = capacities(domain, node_beta.as_deref());
    // widen the candidate sets until a complete matching exists
    let mut candidates = candidate_sets(point, forcing, space, opts.select_tol);
    let mut tol = opts.select_tol;
    while opts.strategy == Selection::Balanced
        && tol < 1e3 * opts.select_tol
        && balanced_selection(&candidates, &caps).1 < domain.n_cells()
    {
        tol *= 10.0;
        candidates = candidate_sets(point, forcing, space, tol);
    }
    let value = |sel: &[usize]| -> Result<(f64, f64)> {
        let u = displacement_of(point, sel);
        let beta = recover_beta(point, sel)?;
        primal_value(&u, beta.as_deref(), point.mode.entropy(), domain, space, f, forcing)
    };

    let vols: Vec<f64> = domain.cells.iter().map(|c| c.volume).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..domain.n_cells()).collect();
    let mut best: Option<(Vec<usize>, f64, f64, usize)> = None;
    let mut matched = 0;
    if opts.strategy == Selection::Balanced {
        let share = opts.polish_budget / opts.restarts.max(1);
        for r in 0..opts.restarts.max(1) {
            if r > 0 {
                order.shuffle(&mut rng);
            }
            let (sel, m) = balanced_selection_ordered(&candidates, &caps, &order);
            matched = matched.max(m);
            if m < domain.n_cells() {
                continue;
            }
            let sel = mass_repair(sel, &candidates, domain, node_beta.as_deref());
            let (sel, iv, vv) = swap_descent(sel, &candidates, &vols, share, &value)?;
            if best.as_ref().is_none_or(|b| iv < b.1) {
                best = Some((sel, iv, vv, m));
            }
        }
    }
    let (selection, index, i_value, vsf_value) = match best {
        Some((sel, iv, vv, _)) => (Selection::Balanced, sel, iv, vv),
        None => {
            let (iv, vv) = value(&first)?;
            (Selection::FirstIndex, first, iv, vv)
        }
    };

    let u = displacement_of(point, &index);
    let beta = recover_beta(point, &index)?;
    let pushforward_errors = pushforward_error(&u, beta.as_deref(), domain);
    let masses = node_masses(&index, domain, node_beta.as_deref());
    let mass_defect = masses
        .iter()
        .zip(&domain.nodes)
        .zip(&point.potential.values)
        .map(|((m, y), l)| l.abs() * (y.weight - m).abs())
        .sum();
    Ok(PrimalField {
        mass_defect,
        u,
        beta,
        node_index: index,
        i_value,
        vsf_value,
        gap: i_value + point.j_value,
        pushforward_errors,
        tie_count: ties,
        tie_fraction: ties as f64 / domain.n_cells() as f64,
        selection,
        matched,
    })
}

fn node_masses(index: &[usize], domain: &Domain, node_beta: Option<&[f64]>) -> Vec<f64> {
    let mut m = vec![0.0; domain.n_nodes()];
    for (c, &j) in index.iter().enumerate() {
        m[j] += domain.cells[c].volume * node_beta.map_or(1.0, |b| b[j]);
    }
    m
}

/// Single-cell moves inside the candidate sets that reduce `sum_j |w_j - m_j|`.
fn mass_repair(mut index: Vec<usize>, candidates: &[Vec<usize>], domain: &Domain, node_beta: Option<&[f64]>) -> Vec<usize> {
    let mut m = node_masses(&index, domain, node_beta);
    let w: Vec<f64> = domain.nodes.iter().map(|n| n.weight).collect();
    let mu = |c: usize, j: usize| domain.cells[c].volume * node_beta.map_or(1.0, |b| b[j]);
    for _ in 0..50 {
        let mut moved = false;
        for c in 0..index.len() {
            let a = index[c];
            let here = (w[a] - m[a]).abs();
            let mut best = (0.0, a);
            for &b in &candidates[c] {
                if b == a {
                    continue;
                }
                let delta = (w[a] - m[a] + mu(c, a)).abs() - here + (w[b] - m[b] - mu(c, b)).abs() - (w[b] - m[b]).abs();
                if delta < best.0 - 1e-15 {
                    best = (delta, b);
                }
            }
            if best.1 != a {
                m[a] -= mu(c, a);
                m[best.1] += mu(c, best.1);
                index[c] = best.1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    index
}

/// Pairwise swaps of selected nodes between cells of equal volume, kept when `I` decreases.
/// Such swaps preserve the pushed-forward measure exactly.
fn swap_descent(
    mut index: Vec<usize>,
    candidates: &[Vec<usize>],
    vols: &[f64],
    mut budget: usize,
    value: &dyn Fn(&[usize]) -> Result<(f64, f64)>,
) -> Result<(Vec<usize>, f64, f64)> {
    let (mut i_value, mut vsf_value) = value(&index)?;
    let mut improved = true;
    while improved && budget > 0 {
        improved = false;
        for a in 0..index.len() {
            for b in a + 1..index.len() {
                if budget == 0 {
                    break;
                }
                let (ja, jb) = (index[a], index[b]);
                if ja == jb
                    || (vols[a] - vols[b]).abs() > 1e-12 * vols[a]
                    || !candidates[a].contains(&jb)
                    || !candidates[b].contains(&ja)
                {
                    continue;
                }
                budget -= 1;
                index.swap(a, b);
                let (iv, vv) = value(&index)?;
                if iv < i_value - 1e-14 * (1.0 + i_value.abs()) {
                    i_value = iv;
                    vsf_value = vv;
                    improved = true;
                } else {
                    index.swap(a, b);
                }
            }
        }
    }
    Ok((index, i_value, vsf_value))
}

fn displacement_of(point: &DualPoint, index: &[usize]) -> Displacement {
    Displacement { values: index.iter().map(|&j| point.k.slopes[j]).collect(), provenance: Provenance::Recovered }
}

/// One-dimensional monotone cell-to-node assignment matching cumulative mass:
/// the measure-preserving discrete identity when cell and node masses nest.
pub fn monotone_assignment(domain: &Domain) -> Displacement {
    let total: f64 = domain.omega_measure();
    let scale = domain.lambda_measure() / total;
    let mut cum_nodes = Vec::with_capacity(domain.n_nodes());
    let mut acc = 0.0;
    for n in &domain.nodes {
        acc += n.weight;
        cum_nodes.push(acc);
    }
    let mut acc = 0.0;
    let values = domain
        .cells
        .iter()
        .map(|c| {
            let mid = (acc + 0.5 * c.volume) * scale;
            acc += c.volume;
            let j = cum_nodes.partition_point(|&x| x < mid).min(domain.n_nodes() - 1);
            domain.nodes[j].point
        })
        .collect();
    Displacement { values, provenance: Provenance::Analytic }
}

/// Per-cell candidate nodes: pieces of `k` within `tol` of the cellwise max, best first.
pub fn candidate_sets(point: &DualPoint, forcing: &Forcing, space: &TestSpace, tol: f64) -> Vec<Vec<usize>> {
    let (_, divs) = space.eval_cells(&point.phi);
    divs.iter()
        .zip(&forcing.values)
        .map(|(d, f)| {
            let v = [f[0] + d[0], f[1] + d[1]];
            let pieces: Vec<f64> =
                point.k.slopes.iter().zip(&point.k.offsets).map(|(y, o)| dot(*y, v) + o).collect();
            let best = pieces.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let cut = best - tol * (1.0 + best.abs());
            let mut c: Vec<usize> = (0..pieces.len()).filter(|&j| pieces[j] >= cut).collect();
            c.sort_by(|&a, &b| pieces[b].total_cmp(&pieces[a]).then(a.cmp(&b)));
            c
        })
        .collect()
}

/// Node capacities in cell units: `w_j / (vol * beta_j)` rounded so they sum to the cell count.
fn capacities(domain: &Domain, node_beta: Option<&[f64]>) -> Vec<usize> {
    let n = domain.n_cells();
    let vol = domain.omega_measure() / n as f64;
    let raw: Vec<f64> = domain
        .nodes
        .iter()
        .enumerate()
        .map(|(j, y)| y.weight / (vol * node_beta.map_or(1.0, |b| b[j])))
        .collect();
    let mut cap: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n.saturating_sub(cap.iter().sum());
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for j in order.into_iter().cycle().take(4 * raw.len()) {
        if left == 0 {
            break;
        }
        cap[j] += 1;
        left -= 1;
    }
    cap
}

/// Capacitated matching of cells into their candidate sets (augmenting paths).
/// Unmatched cells keep their first candidate.
pub fn balanced_selection(candidates: &[Vec<usize>], caps: &[usize]) -> (Vec<usize>, usize) {
    let order: Vec<usize> = (0..candidates.len()).collect();
    balanced_selection_ordered(candidates, caps, &order)
}

/// As [`balanced_selection`], inserting cells in the given order.
pub fn balanced_selection_ordered(candidates: &[Vec<usize>], caps: &[usize], order: &[usize]) -> (Vec<usize>, usize) {
    let n = candidates.len();
    let mut owner: Vec<Vec<usize>> = vec![Vec::new(); caps.len()];
    let mut assign: Vec<Option<usize>> = vec![None; n];

    fn augment(
        c: usize,
        candidates: &[Vec<usize>],
        caps: &[usize],
        owner: &mut [Vec<usize>],
        assign: &mut [Option<usize>],
        seen: &mut [bool],
    ) -> bool {
        for &j in &candidates[c] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].len() < caps[j] {
                owner[j].push(c);
                assign[c] = Some(j);
                return true;
            }
            for slot in 0..owner[j].len() {
                let other = owner[j][slot];
                if augment(other, candidates, caps, owner, assign, seen) {
                    owner[j][slot] = c;
                    assign[c] = Some(j);
                    return true;
                }
            }
        }
        false
    }

    let mut matched = 0;
    for &c in order {
        let mut seen = vec![false; caps.len()];
        if augment(c, candidates, caps, &mut owner, &mut assign, &mut seen) {
            matched += 1;
        }
    }
    (assign.iter().zip(candidates).map(|(a, c)| a.unwrap_or(c[0])).collect(), matched)
}
