//! Finite test families of matrix fields vanishing on the boundary of `Omega`.
//!
//! Scalar shape functions are hierarchical P1 hats: level `n` keeps every hat
//! of level `n-1` and adds the nodal hats of the newly created vertices, so the
//! span is that of the level-`n` nodal basis while the basis list is nested by
//! prefix. Each scalar hat is replicated over the `d*d` matrix components.
//!
//! The convex family adds `eps * psi * I` with `psi(x) = (|x|^2 - rho^2)/2` and
//! `eps >= 1/n`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::linalg::{Mat, Point, ZERO, ZERO_MAT};

pub const MAX_LEVEL: u32 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    H1Subspace,
    H2Convex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldCoeffs {
    pub coeffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

impl FieldCoeffs {
    pub fn add(&self, other: &FieldCoeffs) -> FieldCoeffs {
        FieldCoeffs {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
            eps: match (self.eps, other.eps) {
                (Some(a), Some(b)) => Some(a + b),
                (a, b) => a.or(b),
            },
        }
    }

    /// Coefficients followed by `eps` when present.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.coeffs.clone();
        if let Some(e) = self.eps {
            v.push(e);
        }
        v
    }
}

#[derive(Clone, Debug)]
enum Hat {
    Interval { center: f64, half: f64 },
    Triangle { level: usize, vertex: usize },
}

#[derive(Clone, Debug)]
struct TriMesh {
    vertices: Vec<Point>,
    boundary: Vec<bool>,
    triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    fn coarse(radius: f64) -> Self {
        let mut vertices = vec![[0.0, 0.0]];
        let mut boundary = vec![false];
        for k in 0..4 {
            let th = k as f64 * std::f64::consts::FRAC_PI_2;
            vertices.push([radius * th.cos(), radius * th.sin()]);
            boundary.push(true);
        }
        let triangles = vec![[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]];
        Self { vertices, boundary, triangles }
    }

    /// Red refinement; midpoints of boundary edges are pushed onto the circle.
    fn refine(&self, radius: f64) -> Self {
        use std::collections::HashMap;
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut vertices = self.vertices.clone();
        let mut boundary = self.boundary.clone();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>, boundary: &mut Vec<bool>| -> usize {
            let key = (a.min(b), a.max(b));
            if let Some(&i) = mid.get(&key) {
                return i;
            }
            let (pa, pb) = (vertices[a], vertices[b]);
            let mut p = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            let on_boundary = edge_count[&key] == 1;
            if on_boundary {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                p = [radius * p[0] / r, radius * p[1] / r];
            }
            vertices.push(p);
            boundary.push(on_boundary);
            mid.insert(key, vertices.len() - 1);
            vertices.len() - 1
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for t in &self.triangles {
            let [a, b, c] = *t;
            let ab = midpoint(a, b, &mut vertices, &mut boundary);
            let bc = midpoint(b, c, &mut vertices, &mut boundary);
            let ca = midpoint(c, a, &mut vertices, &mut boundary);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Self { vertices, boundary, triangles }
    }

    /// Containing triangle with barycentric coordinates and their gradients.
    fn locate(&self, x: Point) -> Option<(usize, [f64; 3], [Point; 3])> {
        for (ti, t) in self.triangles.iter().enumerate() {
            let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
            let (m00, m01) = (a[0] - c[0], b[0] - c[0]);
            let (m10, m11) = (a[1] - c[1], b[1] - c[1]);
            let det = m00 * m11 - m01 * m10;
            let inv = [[m11 / det, -m01 / det], [-m10 / det, m00 / det]];
            let d = [x[0] - c[0], x[1] - c[1]];
            let la = inv[0][0] * d[0] + inv[0][1] * d[1];
            let lb = inv[1][0] * d[0] + inv[1][1] * d[1];
            let lc = 1.0 - la - lb;
            let tol = -1e-12;
            if la >= tol && lb >= tol && lc >= tol {
                let ga = inv[0];
                let gb = inv[1];
                let gc = [-ga[0] - gb[0], -ga[1] - gb[1]];
                return Some((ti, [la, lb, lc], [ga, gb, gc]));
            }
        }
        None
    }
}

/// A finite family `S` of matrix fields.
#[derive(Clone, Debug)]
pub struct TestSpace {
    pub kind: SpaceKind,
    pub level: u32,
    dim: usize,
    omega_radius: f64,
    hats: Vec<Hat>,
    meshes: Vec<TriMesh>,
    n_cells: usize,
    cell_values: Vec<f64>,
    cell_grads: Vec<Point>,
    cell_psi: Vec<f64>,
    cell_centers: Vec<Point>,
    eps_min: f64,
}

pub fn build_h1_space(domain: &Domain, n: u32) -> Result<TestSpace> {
    build(domain, n, SpaceKind::H1Subspace)
}

pub fn build_h2_space(domain: &Domain, n: u32) -> Result<TestSpace> {
    build(domain, n, SpaceKind::H2Convex)
}

pub fn build_space(domain: &Domain, kind: SpaceKind, n: u32) -> Result<TestSpace> {
    build(domain, n, kind)
}

fn build(domain: &Domain, n: u32, kind: SpaceKind) -> Result<TestSpace> {
    if n == 0 || n > MAX_LEVEL {
        return Err(Error::LevelOutOfRange(n));
    }
    let dim = domain.dim();
    let rho = domain.omega().radius;
    let mut hats = Vec::new();
    let mut meshes = Vec::new();
    if dim == 1 {
        for level in 1..=n {
            let half = 2.0 * rho / (1u64 << level) as f64;
            for t in 1..=(1u64 << (level - 1)) {
                hats.push(Hat::Interval { center: -rho + (2 * t - 1) as f64 * half, half });
            }
        }
    } else {
        let mut mesh = TriMesh::coarse(rho);
        let mut known = 0;
        for level in 0..n as usize {
            if level > 0 {
                mesh = mesh.refine(rho);
            }
            for v in known..mesh.vertices.len() {
                if !mesh.boundary[v] {
                    hats.push(Hat::Triangle { level, vertex: v });
                }
            }
            known = mesh.vertices.len();
            meshes.push(mesh.clone());
        }
    }

    let ns = hats.len();
    let n_cells = domain.n_cells();
    let mut space = TestSpace {
        kind,
        level: n,
        dim,
        omega_radius: rho,
        hats,
        meshes,
        n_cells,
        cell_values: vec![0.0; n_cells * ns],
        cell_grads: vec![ZERO; n_cells * ns],
        cell_psi: Vec::with_capacity(n_cells),
        cell_centers: Vec::with_capacity(n_cells),
        eps_min: 1.0 / n as f64,
    };
    for (c, cell) in domain.cells.iter().enumerate() {
        let vals = space.scalar_values(cell.center);
        for (s, (v, g)) in vals.into_iter().enumerate() {
            space.cell_values[c * ns + s] = v;
            space.cell_grads[c * ns + s] = g;
        }
        space.cell_psi.push(space.psi(cell.center));
        space.cell_centers.push(cell.center);
    }
    Ok(space)
}

impl TestSpace {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of scalar hats.
    pub fn n_scalar(&self) -> usize {
        self.hats.len()
    }

    /// Coefficient dimension `m = d^2 * (number of scalar hats)`.
    pub fn m(&self) -> usize {
        self.hats.len() * self.dim * self.dim
    }

    pub fn is_convex_family(&self) -> bool {
        self.kind == SpaceKind::H2Convex
    }

    pub fn eps_min(&self) -> Option<f64> {
        self.is_convex_family().then_some(self.eps_min)
    }

    /// Total number of optimization coordinates (`m`, plus one for `eps`).
    pub fn n_vars(&self) -> usize {
        self.m() + usize::from(self.is_convex_family())
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn zero(&self) -> FieldCoeffs {
        FieldCoeffs { coeffs: vec![0.0; self.m()], eps: self.eps_min() }
    }

    /// Zero coefficients, and `eps = 0` even in the convex family.
    pub fn origin(&self) -> FieldCoeffs {
        FieldCoeffs { coeffs: vec![0.0; self.m()], eps: self.is_convex_family().then_some(0.0) }
    }

    pub fn from_flat(&self, z: &[f64]) -> FieldCoeffs {
        let m = self.m();
        FieldCoeffs { coeffs: z[..m].to_vec(), eps: self.is_convex_family().then(|| z[m]) }
    }

    /// Membership in `S` (the constraint `eps >= 1/n` for the convex family).
    pub fn contains(&self, phi: &FieldCoeffs) -> bool {
        phi.coeffs.len() == self.m()
            && phi.coeffs.iter().all(|c| c.is_finite())
            && match (self.kind, phi.eps) {
                (SpaceKind::H1Subspace, None) => true,
                (SpaceKind::H2Convex, Some(e)) => e.is_finite() && e >= self.eps_min * (1.0 - 1e-15),
                _ => false,
            }
    }

    /// Pads level-`i` coefficients with zeros to this (finer) level.
    pub fn embed(&self, phi: &FieldCoeffs) -> FieldCoeffs {
        let mut coeffs = phi.coeffs.clone();
        coeffs.resize(self.m(), 0.0);
        FieldCoeffs { coeffs, eps: phi.eps.or(self.eps_min()) }
    }

    pub fn psi(&self, x: Point) -> f64 {
        0.5 * (x[0] * x[0] + x[1] * x[1] - self.omega_radius * self.omega_radius)
    }

    pub fn cell_psi(&self, c: usize) -> f64 {
        self.cell_psi[c]
    }

    pub fn cell_center(&self, c: usize) -> Point {
        self.cell_centers[c]
    }

    fn in_omega(&self, x: Point) -> bool {
        let tol = 1e-12 * self.omega_radius;
        match self.dim {
            1 => x[0].abs() <= self.omega_radius + tol && x[1] == 0.0,
            _ => (x[0] * x[0] + x[1] * x[1]).sqrt() <= self.omega_radius + tol,
        }
    }

    /// Value and gradient of every scalar hat at `x`.
    fn scalar_values(&self, x: Point) -> Vec<(f64, Point)> {
        let mut located: Vec<Option<(usize, [f64; 3], [Point; 3])>> = vec![None; self.meshes.len()];
        for (l, m) in self.meshes.iter().enumerate() {
            located[l] = m.locate(x);
        }
        self.hats
            .iter()
            .map(|h| match *h {
                Hat::Interval { center, half } => {
                    let d = x[0] - center;
                    if d.abs() >= half {
                        (0.0, ZERO)
                    } else {
                        let slope = if d < 0.0 { 1.0 / half } else { -1.0 / half };
                        (1.0 - d.abs() / half, [slope, 0.0])
                    }
                }
                Hat::Triangle { level, vertex } => match located[level] {
                    Some((ti, bary, grads)) => {
                        let t = self.meshes[level].triangles[ti];
                        match t.iter().position(|&v| v == vertex) {
                            Some(k) => (bary[k].max(0.0), grads[k]),
                            None => (0.0, ZERO),
                        }
                    }
                    None => (0.0, ZERO),
                },
            })
            .collect()
    }

    fn comp(&self, k: usize) -> (usize, usize, usize) {
        let d2 = self.dim * self.dim;
        let s = k / d2;
        let r = k % d2;
        (s, r / self.dim, r % self.dim)
    }

    fn assemble(&self, phi: &FieldCoeffs, vals: &[(f64, Point)], x: Point, psi: f64) -> (Mat, Point) {
        let mut m = ZERO_MAT;
        let mut dv = ZERO;
        for (k, &c) in phi.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (s, i, j) = self.comp(k);
            let (v, g) = vals[s];
            m[i][j] += c * v;
            dv[i] += c * g[j];
        }
        if let Some(e) = phi.eps {
            for i in 0..self.dim {
                m[i][i] += e * psi;
                dv[i] += e * x[i];
            }
        }
        (m, dv)
    }

    pub fn value_at(&self, phi: &FieldCoeffs, x: Point) -> Result<Mat> {
        if !self.in_omega(x) {
            return Err(Error::OutsideDomain { point: x });
        }
        let vals = self.scalar_values(x);
        Ok(self.assemble(phi, &vals, x, self.psi(x)).0)
    }

    pub fn div_at(&self, phi: &FieldCoeffs, x: Point) -> Result<Point> {
        if !self.in_omega(x) {
            return Err(Error::OutsideDomain { point: x });
        }
        let vals = self.scalar_values(x);
        Ok(self.assemble(phi, &vals, x, self.psi(x)).1)
    }

    /// Value and divergence of `phi` at every cell center.
    pub fn eval_cells(&self, phi: &FieldCoeffs) -> (Vec<Mat>, Vec<Point>) {
        let ns = self.n_scalar();
        let d = self.dim;
        let mut vals = vec![ZERO_MAT; self.n_cells];
        let mut divs = vec![ZERO; self.n_cells];
        for c in 0..self.n_cells {
            let mut m = ZERO_MAT;
            let mut dv = ZERO;
            let row_v = &self.cell_values[c * ns..(c + 1) * ns];
            let row_g = &self.cell_grads[c * ns..(c + 1) * ns];
            for s in 0..ns {
                let (v, g) = (row_v[s], row_g[s]);
                if v == 0.0 && g == ZERO {
                    continue;
                }
                let base = s * d * d;
                for i in 0..d {
                    for j in 0..d {
                        let a = phi.coeffs[base + i * d + j];
                        m[i][j] += a * v;
                        dv[i] += a * g[j];
                    }
                }
            }
            if let Some(e) = phi.eps {
                let x = self.cell_centers[c];
                for i in 0..d {
                    m[i][i] += e * self.cell_psi[c];
                    dv[i] += e * x[i];
                }
            }
            vals[c] = m;
            divs[c] = dv;
        }
        (vals, divs)
    }

    /// Adjoint of [`eval_cells`](Self::eval_cells): returns the flat gradient
    /// (coefficients, then `eps` if present) of `sum_c a_c : phi(x_c) + b_c . div phi(x_c)`.
    pub fn pullback(&self, a: &[Mat], b: &[Point]) -> Vec<f64> {
        let ns = self.n_scalar();
        let d = self.dim;
        let mut g = vec![0.0; self.n_vars()];
        for c in 0..self.n_cells {
            let row_v = &self.cell_values[c * ns..(c + 1) * ns];
            let row_g = &self.cell_grads[c * ns..(c + 1) * ns];
            let (ac, bc) = (&a[c], b[c]);
            for s in 0..ns {
                let (v, gr) = (row_v[s], row_g[s]);
                if v == 0.0 && gr == ZERO {
                    continue;
                }
                let base = s * d * d;
                for i in 0..d {
                    for j in 0..d {
                        g[base + i * d + j] += ac[i][j] * v + bc[i] * gr[j];
                    }
                }
            }
        }
        if self.is_convex_family() {
            let m = self.m();
            for c in 0..self.n_cells {
                let x = self.cell_centers[c];
                for i in 0..d {
                    g[m] += a[c][i][i] * self.cell_psi[c] + b[c][i] * x[i];
                }
            }
        }
        g
    }

    /// Value and divergence of a single flat coordinate's field at cell `c`.
    pub fn basis_cell(&self, k: usize, c: usize) -> (Mat, Point) {
        let mut m = ZERO_MAT;
        let mut dv = ZERO;
        if k == self.m() {
            let x = self.cell_centers[c];
            for i in 0..self.dim {
                m[i][i] = self.cell_psi[c];
                dv[i] = x[i];
            }
            return (m, dv);
        }
        let ns = self.n_scalar();
        let (s, i, j) = self.comp(k);
        let v = self.cell_values[c * ns + s];
        let g = self.cell_grads[c * ns + s];
        m[i][j] = v;
        dv[i] = g[j];
        (m, dv)
    }

    /// Weighted Gram matrix `sum_c vol_c <e_k(x_c), e_l(x_c)>` over all flat coordinates.
    pub fn gram(&self, volumes: &[f64]) -> DMatrix<f64> {
        let n = self.n_vars();
        let mut g = DMatrix::zeros(n, n);
        for c in 0..self.n_cells {
            let fields: Vec<Mat> = (0..n).map(|k| self.basis_cell(k, c).0).collect();
            for k in 0..n {
                if fields[k] == ZERO_MAT {
                    continue;
                }
                for l in k..n {
                    let v = crate::linalg::mat_dot(&fields[k], &fields[l]);
                    if v != 0.0 {
                        g[(k, l)] += volumes[c] * v;
                    }
                }
            }
        }
        for k in 0..n {
            for l in 0..k {
                g[(k, l)] = g[(l, k)];
            }
        }
        g
    }

    /// Boundary vertices of the finest triangulation, for checks in two dimensions.
    pub fn boundary_vertices(&self) -> Vec<Point> {
        match self.meshes.last() {
            Some(m) => m.vertices.iter().zip(&m.boundary).filter(|(_, &b)| b).map(|(v, _)| *v).collect(),
            None => vec![[-self.omega_radius, 0.0], [self.omega_radius, 0.0]],
        }
    }

    /// Number of interior vertices in the finest triangulation (two dimensions).
    pub fn interior_vertex_count(&self) -> usize {
        self.meshes.last().map(|m| m.boundary.iter().filter(|b| !**b).count()).unwrap_or(self.hats.len())
    }

    /// Distinct nonzero slopes of scalar hat `s` in one dimension.
    pub fn hat_slopes(&self, s: usize) -> Vec<f64> {
        match self.hats[s] {
            Hat::Interval { half, .. } => vec![1.0 / half, -1.0 / half],
            Hat::Triangle { .. } => Vec::new(),
        }
    }

    /// Mesh nodes of the finest one-dimensional level, including the endpoints.
    pub fn mesh_nodes_1d(&self) -> Vec<f64> {
        let k = 1u64 << self.level;
        (0..=k).map(|i| -self.omega_radius + 2.0 * self.omega_radius * i as f64 / k as f64).collect()
    }
}
