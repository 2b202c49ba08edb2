//! Small fixed-size vector and matrix helpers.
//!
//! Points and matrices are always stored with two slots; in one dimension the
//! second coordinate (and every matrix entry outside the top-left corner)
//! stays zero, so the same formulas serve both dimensions.

use nalgebra::{DMatrix, DVector};

pub type Point = [f64; 2];
pub type Mat = [[f64; 2]; 2];

pub const ZERO: Point = [0.0, 0.0];
pub const ZERO_MAT: Mat = [[0.0, 0.0], [0.0, 0.0]];

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(s: f64, a: Point) -> Point {
    [s * a[0], s * a[1]]
}

#[inline]
pub fn frob_sq(m: &Mat) -> f64 {
    m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1]
}

#[inline]
pub fn frob(m: &Mat) -> f64 {
    frob_sq(m).sqrt()
}

#[inline]
pub fn mat_dot(a: &Mat, b: &Mat) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

#[inline]
pub fn mat_scale(s: f64, m: &Mat) -> Mat {
    [[s * m[0][0], s * m[0][1]], [s * m[1][0], s * m[1][1]]]
}

#[inline]
pub fn mat_add(a: &Mat, b: &Mat) -> Mat {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

/// Symmetric positive definite solver with a tiny diagonal ridge as fallback.
#[derive(Clone, Debug)]
pub struct SpdSolver {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SpdSolver {
    pub fn new(a: DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        if n == 0 {
            return None;
        }
        if let Some(chol) = a.clone().cholesky() {
            return Some(Self { chol });
        }
        let tr = (0..n).map(|i| a[(i, i)].abs()).sum::<f64>().max(1e-300);
        let mut b = a;
        for i in 0..n {
            b[(i, i)] += 1e-12 * tr / n as f64;
        }
        b.cholesky().map(|chol| Self { chol })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(rhs);
        self.chol.solve(&v).as_slice().to_vec()
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
