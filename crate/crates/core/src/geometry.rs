//! Centered convex domain pairs `(Omega, Lambda)` with their quadrature grids.
//!
//! `Omega` carries midpoint cells (uniform in one dimension, a polar grid on
//! the disc). `Lambda` carries a lattice of nodes that reaches the boundary,
//! each weighted by the measure of its dual cell inside `Lambda`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Interval,
    Disc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub radius: f64,
}

impl ShapeSpec {
    pub fn interval(radius: f64) -> Self {
        Self { kind: ShapeKind::Interval, radius }
    }

    pub fn disc(radius: f64) -> Self {
        Self { kind: ShapeKind::Disc, radius }
    }

    pub fn measure(&self) -> f64 {
        match self.kind {
            ShapeKind::Interval => 2.0 * self.radius,
            ShapeKind::Disc => PI * self.radius * self.radius,
        }
    }

    /// Membership in the closed shape, with absolute slack `tol`.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        match self.kind {
            ShapeKind::Interval => p[0].abs() <= self.radius + tol && p[1] == 0.0,
            ShapeKind::Disc => norm(p) <= self.radius + tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dim: usize,
    pub omega: ShapeSpec,
    pub lambda: ShapeSpec,
    pub n_cells: usize,
    pub n_lambda_nodes: usize,
    #[serde(default)]
    pub incompressible: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub center: Point,
    pub volume: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeNode {
    pub point: Point,
    pub weight: f64,
}

/// A validated domain pair. Serializes as its [`DomainSpec`]; grids are rebuilt on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "DomainSpec", into = "DomainSpec")]
pub struct Domain {
    spec: DomainSpec,
    pub r_star: f64,
    pub cells: Vec<Cell>,
    pub nodes: Vec<LatticeNode>,
}

impl TryFrom<DomainSpec> for Domain {
    type Error = Error;
    fn try_from(spec: DomainSpec) -> Result<Self> {
        make_domain(spec)
    }
}

impl From<Domain> for DomainSpec {
    fn from(d: Domain) -> Self {
        d.spec
    }
}

const R_STAR_SAFETY: f64 = 1.01;

pub fn make_domain(spec: DomainSpec) -> Result<Domain> {
    let kind_ok = match spec.dim {
        1 => spec.omega.kind == ShapeKind::Interval && spec.lambda.kind == ShapeKind::Interval,
        2 => spec.omega.kind == ShapeKind::Disc && spec.lambda.kind == ShapeKind::Disc,
        d => return Err(Error::InvalidDomain(format!("dimension {d} is not supported (use 1 or 2)"))),
    };
    if !kind_ok {
        return Err(Error::InvalidDomain(format!(
            "dimension {} requires {} shapes",
            spec.dim,
            if spec.dim == 1 { "interval" } else { "disc" }
        )));
    }
    for (name, s) in [("omega", spec.omega), ("lambda", spec.lambda)] {
        if !(s.radius.is_finite() && s.radius > 0.0) {
            return Err(Error::InvalidDomain(format!("{name} radius must be positive, got {}", s.radius)));
        }
    }
    if spec.n_cells == 0 {
        return Err(Error::InvalidDomain("zero-size cell grid".into()));
    }
    if spec.n_lambda_nodes == 0 {
        return Err(Error::InvalidDomain("zero-size lambda lattice".into()));
    }
    let (mo, ml) = (spec.omega.measure(), spec.lambda.measure());
    if spec.incompressible && (mo - ml).abs() > 1e-12 * mo.max(ml) {
        return Err(Error::MeasureMismatch { omega: mo, lambda: ml });
    }

    let rl = spec.lambda.radius;
    let r_star = R_STAR_SAFETY * 1.0_f64.max(1.0 / rl).max(2.0 * rl);

    let (cells, nodes) = match spec.dim {
        1 => (interval_cells(spec.omega.radius, spec.n_cells), interval_nodes(rl, spec.n_lambda_nodes)),
        _ => (disc_cells(spec.omega.radius, spec.n_cells), disc_nodes(rl, spec.n_lambda_nodes)),
    };
    Ok(Domain { spec, r_star, cells, nodes })
}

impl Domain {
    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn omega(&self) -> ShapeSpec {
        self.spec.omega
    }

    pub fn lambda(&self) -> ShapeSpec {
        self.spec.lambda
    }

    pub fn omega_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    pub fn lambda_measure(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Radius of the largest centered ball inside `Lambda`.
    pub fn lambda_inner_radius(&self) -> f64 {
        self.spec.lambda.radius
    }

    pub fn lambda_diameter(&self) -> f64 {
        2.0 * self.spec.lambda.radius
    }

    pub fn in_omega(&self, p: Point) -> bool {
        self.spec.omega.contains(p, 1e-12 * self.spec.omega.radius)
    }

    pub fn in_lambda(&self, p: Point) -> bool {
        self.spec.lambda.contains(p, 1e-12 * self.spec.lambda.radius)
    }
}

/// `max_{u in closure(Lambda)} u.v`, in closed form for centered balls.
pub fn support_function(domain: &Domain, v: Point) -> f64 {
    domain.spec.lambda.radius * norm(v)
}

fn interval_cells(radius: f64, n: usize) -> Vec<Cell> {
    let h = 2.0 * radius / n as f64;
    (0..n)
        .map(|i| Cell { center: [-radius + (i as f64 + 0.5) * h, 0.0], volume: h })
        .collect()
}

fn interval_nodes(radius: f64, n: usize) -> Vec<LatticeNode> {
    if n == 1 {
        return vec![LatticeNode { point: [0.0, 0.0], weight: 2.0 * radius }];
    }
    let h = 2.0 * radius / (n - 1) as f64;
    (0..n)
        .map(|j| {
            let y = if j == n - 1 { radius } else { -radius + j as f64 * h };
            let w = if j == 0 || j == n - 1 { 0.5 * h } else { h };
            LatticeNode { point: [y, 0.0], weight: w }
        })
        .collect()
}

/// Split `total` into integer parts proportional to `shares` (largest remainder).
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let ideal: Vec<f64> = shares.iter().map(|s| total as f64 * s / sum).collect();
    let mut parts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut rest = total - parts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        parts[i] += 1;
        rest -= 1;
    }
    parts
}

/// Annular sector centroid and area.
fn sector(r1: f64, r2: f64, th1: f64, th2: f64) -> Cell {
    let dth = th2 - th1;
    let area = 0.5 * dth * (r2 * r2 - r1 * r1);
    if dth >= 2.0 * PI - 1e-12 {
        return Cell { center: [0.0, 0.0], volume: area };
    }
    let rbar = (2.0 / 3.0) * (r2.powi(3) - r1.powi(3)) / (r2 * r2 - r1 * r1) * (0.5 * dth).sin() / (0.5 * dth);
    let mid = 0.5 * (th1 + th2);
    Cell { center: [rbar * mid.cos(), rbar * mid.sin()], volume: area }
}

fn disc_cells(radius: f64, n: usize) -> Vec<Cell> {
    let rings = ((n as f64 / 4.0).sqrt().round() as usize).max(1);
    let shares: Vec<f64> = (0..rings).map(|j| (2 * j + 1) as f64).collect();
    let mut counts = apportion(n, &shares);
    // every ring needs at least one sector
    for j in 0..rings {
        while counts[j] == 0 {
            let donor = (0..rings).max_by_key(|&i| counts[i]).unwrap();
            counts[donor] -= 1;
            counts[j] += 1;
        }
    }
    let mut cells = Vec::with_capacity(n);
    for (j, &m) in counts.iter().enumerate() {
        let r1 = radius * j as f64 / rings as f64;
        let r2 = radius * (j + 1) as f64 / rings as f64;
        for k in 0..m {
            let th1 = 2.0 * PI * k as f64 / m as f64;
            let th2 = 2.0 * PI * (k + 1) as f64 / m as f64;
            cells.push(sector(r1, r2, th1, th2));
        }
    }
    cells
}

fn disc_nodes(radius: f64, n: usize) -> Vec<LatticeNode> {
    let area = PI * radius * radius;
    if n == 1 {
        return vec![LatticeNode { point: [0.0, 0.0], weight: area }];
    }
    let m = n - 1;
    // rings with about 2*pi*j nodes each: pi*R*(R+1) ~ m
    let mut rings = (((1.0 + 4.0 * m as f64 / PI).sqrt() - 1.0) / 2.0).round().max(1.0) as usize;
    rings = rings.min(m);
    let shares: Vec<f64> = (1..=rings).map(|j| j as f64).collect();
    let mut counts = apportion(m, &shares);
    for j in 0..rings {
        while counts[j] == 0 {
            let donor = (0..rings).max_by_key(|&i| counts[i]).unwrap();
            counts[donor] -= 1;
            counts[j] += 1;
        }
    }
    let dr = radius / rings as f64;
    let mut nodes = Vec::with_capacity(n);
    nodes.push(LatticeNode { point: [0.0, 0.0], weight: PI * (0.5 * dr).powi(2) });
    for (idx, &mj) in counts.iter().enumerate() {
        let j = idx + 1;
        let r = if j == rings { radius } else { j as f64 * dr };
        let inner = (j as f64 - 0.5) * dr;
        let outer = if j == rings { radius } else { (j as f64 + 0.5) * dr };
        let band = PI * (outer * outer - inner * inner);
        for k in 0..mj {
            let th = 2.0 * PI * k as f64 / mj as f64;
            nodes.push(LatticeNode { point: [r * th.cos(), r * th.sin()], weight: band / mj as f64 });
        }
    }
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval(n_cells: usize, n_nodes: usize) -> Domain {
        make_domain(DomainSpec {
            dim: 1,
            omega: ShapeSpec::interval(0.5),
            lambda: ShapeSpec::interval(0.5),
            n_cells,
            n_lambda_nodes: n_nodes,
            incompressible: true,
        })
        .unwrap()
    }

    #[test]
    fn r_star_of_unit_interval() {
        let d = unit_interval(64, 33);
        assert!((d.r_star - 2.02).abs() < 1e-12);
        let inner = 1.0 / d.r_star;
        assert!(inner <= d.lambda_inner_radius() && d.lambda().radius <= d.r_star / 2.0);
    }

    #[test]
    fn disc_cells_cover_area() {
        let d = make_domain(DomainSpec {
            dim: 2,
            omega: ShapeSpec::disc(0.5),
            lambda: ShapeSpec::disc(0.5),
            n_cells: 400,
            n_lambda_nodes: 97,
            incompressible: true,
        })
        .unwrap();
        assert_eq!(d.n_cells(), 400);
        assert_eq!(d.n_nodes(), 97);
        let target = PI / 4.0;
        assert!((d.omega_measure() - target).abs() <= 1e-12 * target);
        assert!((d.lambda_measure() - target).abs() <= 1e-12 * target);
        assert!(d.cells.iter().all(|c| d.in_omega(c.center)));
        assert!(d.nodes.iter().all(|n| d.in_lambda(n.point)));
        let boundary = d.nodes.iter().filter(|n| (norm(n.point) - 0.5).abs() < 1e-14).count();
        assert!(boundary > 0);
    }

    #[test]
    fn measure_mismatch_rejected() {
        let err = make_domain(DomainSpec {
            dim: 1,
            omega: ShapeSpec::interval(0.5),
            lambda: ShapeSpec::interval(0.25),
            n_cells: 8,
            n_lambda_nodes: 5,
            incompressible: true,
        })
        .unwrap_err();
        assert!(matches!(err, Error::MeasureMismatch { .. }));
    }

    #[test]
    fn rejects_bad_specs() {
        let base = DomainSpec {
            dim: 2,
            omega: ShapeSpec::interval(0.5),
            lambda: ShapeSpec::disc(0.5),
            n_cells: 8,
            n_lambda_nodes: 5,
            incompressible: false,
        };
        assert!(make_domain(base.clone()).is_err());
        let mut zero = base.clone();
        zero.omega = ShapeSpec::disc(0.5);
        zero.n_cells = 0;
        assert!(make_domain(zero).is_err());
        let mut neg = base;
        neg.omega = ShapeSpec::disc(-1.0);
        assert!(make_domain(neg).is_err());
    }

    #[test]
    fn support_function_examples() {
        let d = unit_interval(8, 5);
        assert_eq!(support_function(&d, [-3.0, 0.0]), 1.5);
        assert_eq!(support_function(&d, [0.0, 0.0]), 0.0);
        let disc = make_domain(DomainSpec {
            dim: 2,
            omega: ShapeSpec::disc(0.5),
            lambda: ShapeSpec::disc(0.5),
            n_cells: 16,
            n_lambda_nodes: 9,
            incompressible: false,
        })
        .unwrap();
        assert_eq!(support_function(&disc, [2.0, 0.0]), 1.0);
    }

    #[test]
    fn interval_lattice_weights_are_trapezoidal() {
        let d = unit_interval(64, 33);
        assert_eq!(d.nodes[0].point[0], -0.5);
        assert_eq!(d.nodes[32].point[0], 0.5);
        assert!((d.nodes[0].weight - 1.0 / 64.0).abs() < 1e-15);
        assert!((d.nodes[1].weight - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_regenerates_grids() {
        let d = unit_interval(16, 9);
        let s = serde_json::to_string(&d).unwrap();
        let back: Domain = serde_json::from_str(&s).unwrap();
        assert_eq!(back.cells, d.cells);
        assert_eq!(back.nodes, d.nodes);
        assert!(!s.contains("\"cells\""));
    }
}
