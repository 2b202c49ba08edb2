//! Lower convex envelope of finitely many points `(y_j, g_j)`.
//!
//! For a max-of-affine function `k(v) = max_j (y_j.v - g_j)` the Legendre
//! conjugate is `k*(u) = conv(g)(u)`, finite exactly on the hull of the `y_j`.
//! One dimension uses a monotone-chain hull; two dimensions solve the small
//! linear program `min sum_j lambda_j g_j` over convex combinations hitting `u`.

use crate::linalg::Point;

#[derive(Clone, Debug)]
pub enum Envelope {
    Line(Vec<(f64, f64)>),
    Plane { points: Vec<Point>, values: Vec<f64> },
}

impl Envelope {
    pub fn new(points: &[Point], values: &[f64], dim: usize) -> Self {
        assert_eq!(points.len(), values.len());
        if dim == 1 {
            Envelope::Line(lower_hull(points.iter().map(|p| p[0]).zip(values.iter().copied()).collect()))
        } else {
            Envelope::Plane { points: points.to_vec(), values: values.to_vec() }
        }
    }

    /// `None` when `u` lies outside the hull of the points.
    pub fn eval(&self, u: Point) -> Option<f64> {
        match self {
            Envelope::Line(hull) => eval_hull(hull, u[0]),
            Envelope::Plane { points, values } => simplex_envelope(points, values, u),
        }
    }
}

fn lower_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
    pts.dedup_by(|b, a| a.0 == b.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

fn eval_hull(hull: &[(f64, f64)], u: f64) -> Option<f64> {
    let first = hull.first()?;
    let last = hull.last()?;
    let slack = 1e-12 * (1.0 + first.0.abs().max(last.0.abs()));
    if u < first.0 - slack || u > last.0 + slack {
        return None;
    }
    if hull.len() == 1 {
        return Some(first.1);
    }
    let u = u.clamp(first.0, last.0);
    let i = hull.partition_point(|p| p.0 < u);
    if i == 0 {
        return Some(first.1);
    }
    if i >= hull.len() {
        return Some(last.1);
    }
    let (a, b) = (hull[i - 1], hull[i]);
    if b.0 == u {
        return Some(b.1);
    }
    let s = (u - a.0) / (b.0 - a.0);
    Some(a.1 + s * (b.1 - a.1))
}

const PIVOT_EPS: f64 = 1e-11;

/// Two-phase dense simplex with Bland's rule for the 3-row envelope LP.
fn simplex_envelope(points: &[Point], values: &[f64], u: Point) -> Option<f64> {
    let n = points.len();
    let rows = 3;
    let scale = points.iter().fold(1e-300_f64, |m, p| m.max(p[0].abs()).max(p[1].abs()));
    let mut a = vec![vec![0.0; n + rows + 1]; rows];
    let rhs = [1.0, u[0] / scale, u[1] / scale];
    for j in 0..n {
        a[0][j] = 1.0;
        a[1][j] = points[j][0] / scale;
        a[2][j] = points[j][1] / scale;
    }
    for i in 0..rows {
        let sign = if rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            a[i][j] *= sign;
        }
        a[i][n + i] = 1.0;
        a[i][n + rows] = sign * rhs[i];
    }
    let mut basis: Vec<usize> = (n..n + rows).collect();

    // phase one: minimize the sum of artificials
    let mut cost1 = vec![0.0; n + rows];
    for c in cost1.iter_mut().skip(n) {
        *c = 1.0;
    }
    run_simplex(&mut a, &mut basis, &cost1, n + rows)?;
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &b)| b >= n)
        .map(|(i, _)| a[i][n + rows])
        .sum();
    if infeas > 1e-9 {
        return None;
    }
    // drive zero-level artificials out of the basis, dropping redundant rows
    let mut i = 0;
    while i < a.len() {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| a[i][j].abs() > PIVOT_EPS) {
                pivot(&mut a, &mut basis, i, j);
                i += 1;
            } else {
                a.remove(i);
                basis.remove(i);
            }
        } else {
            i += 1;
        }
    }
    let cost2: Vec<f64> = values.to_vec();
    run_simplex(&mut a, &mut basis, &cost2, n)?;
    let width = a[0].len() - 1;
    Some(basis.iter().enumerate().map(|(i, &b)| values[b] * a[i][width]).sum())
}

fn run_simplex(a: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) -> Option<()> {
    let width = a[0].len() - 1;
    for _ in 0..10_000 {
        // reduced costs
        let mut enter = None;
        for j in 0..allowed {
            if basis.contains(&j) {
                continue;
            }
            let mut r = cost[j];
            for (i, &b) in basis.iter().enumerate() {
                r -= cost[b] * a[i][j];
            }
            if r < -1e-12 {
                enter = Some(j);
                break;
            }
        }
        let Some(j) = enter else { return Some(()) };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..a.len() {
            if a[i][j] > PIVOT_EPS {
                let ratio = a[i][width] / a[i][j];
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-15 || (ratio <= lr + 1e-15 && basis[i] < basis[li]) {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let (i, _) = leave?;
        pivot(a, basis, i, j);
    }
    None
}

fn pivot(a: &mut [Vec<f64>], basis: &mut [usize], r: usize, c: usize) {
    let p = a[r][c];
    for x in a[r].iter_mut() {
        *x /= p;
    }
    let row = a[r].clone();
    for (i, ai) in a.iter_mut().enumerate() {
        if i != r {
            let f = ai[c];
            if f != 0.0 {
                for (x, y) in ai.iter_mut().zip(&row) {
                    *x -= f * y;
                }
            }
        }
    }
    basis[r] = c;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_envelope_of_parabola_samples() {
        let pts: Vec<Point> = (0..11).map(|i| [-0.5 + 0.1 * i as f64, 0.0]).collect();
        let vals: Vec<f64> = pts.iter().map(|p| p[0] * p[0]).collect();
        let env = Envelope::new(&pts, &vals, 1);
        assert!((env.eval([0.3, 0.0]).unwrap() - 0.09).abs() < 1e-14);
        assert!((env.eval([0.35, 0.0]).unwrap() - 0.5 * (0.09 + 0.16)).abs() < 1e-14);
        assert!(env.eval([0.6, 0.0]).is_none());
    }

    #[test]
    fn line_envelope_drops_concave_bump() {
        let pts: Vec<Point> = vec![[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
        let env = Envelope::new(&pts, &[0.0, 5.0, 0.0], 1);
        assert_eq!(env.eval([0.0, 0.0]), Some(0.0));
    }

    #[test]
    fn plane_envelope_matches_affine_and_bump() {
        let mut pts = vec![[0.0, 0.0]];
        for k in 0..8 {
            let th = k as f64 * std::f64::consts::PI / 4.0;
            pts.push([th.cos(), th.sin()]);
        }
        // affine data is reproduced exactly
        let vals: Vec<f64> = pts.iter().map(|p| 1.0 + 2.0 * p[0] - p[1]).collect();
        let env = Envelope::new(&pts, &vals, 2);
        for u in [[0.0, 0.0], [0.3, -0.2], [0.5, 0.5]] {
            assert!((env.eval(u).unwrap() - (1.0 + 2.0 * u[0] - u[1])).abs() < 1e-12);
        }
        // a raised center is ignored
        let mut bump = vec![0.0; pts.len()];
        bump[0] = 3.0;
        let env = Envelope::new(&pts, &bump, 2);
        assert!(env.eval([0.0, 0.0]).unwrap().abs() < 1e-12);
        assert!(env.eval([2.0, 0.0]).is_none());
    }

    #[test]
    fn plane_matches_line_on_collinear_points() {
        let pts: Vec<Point> = (0..9).map(|i| [-0.5 + 0.125 * i as f64, 0.0]).collect();
        let vals: Vec<f64> = pts.iter().map(|p| (3.0 * p[0]).sin()).collect();
        let line = Envelope::new(&pts, &vals, 1);
        let plane = Envelope::new(&pts, &vals, 2);
        for p in &pts {
            let a = line.eval(*p).unwrap();
            let b = plane.eval(*p).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} {b}");
        }
    }
}
