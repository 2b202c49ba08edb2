//! Conjugate-type transforms between potentials on the `Lambda`-lattice and
//! convex functions of the force variable `v`.
//!
//! * `l^#(v) = max_u [u.v + H*(-l(u))]`
//! * `k_#(u) = sup_t (k*(u) - H(t))/t`
//! * `l^&(v) = max_u [u.v - l(u)]`
//! * `k_&(u) = k*(u)`
//!
//! Every `k` is stored as a finite max of affine pieces indexed by lattice
//! nodes, so `k*` at a node is the lower convex envelope of `-offsets`.

use serde::{Deserialize, Serialize};

use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::integrands::Entropy;
use crate::linalg::{dot, norm, Point};

/// Values of `l` at the lattice nodes; `l = +inf` off `closure(Lambda)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub values: Vec<f64>,
}

impl Potential {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `s_l = -min l`.
    pub fn s_l(&self) -> f64 {
        -self.min()
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|x| x + c).collect() }
    }

    pub fn normalized(&self) -> Self {
        self.shifted(-self.min())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MajorantKind {
    Sharp,
    Amp,
}

/// `k(v) = max_j (slope_j . v + offset_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugateMajorant {
    pub slopes: Vec<Point>,
    pub offsets: Vec<f64>,
    pub kind: MajorantKind,
}

/// Maximizing piece with tie telemetry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Argmax {
    pub index: usize,
    pub value: f64,
    /// Number of pieces within the tie tolerance of the maximum (1 when unique).
    pub multiplicity: usize,
}

impl ConjugateMajorant {
    pub fn eval(&self, v: Point) -> f64 {
        self.slopes
            .iter()
            .zip(&self.offsets)
            .map(|(y, o)| dot(*y, v) + o)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest-index maximizer; pieces within `tie_tol` of the max are counted.
    pub fn argmax(&self, v: Point, tie_tol: f64) -> Argmax {
        let mut best = 0;
        let mut value = f64::NEG_INFINITY;
        for (j, (y, o)) in self.slopes.iter().zip(&self.offsets).enumerate() {
            let p = dot(*y, v) + o;
            if p > value {
                value = p;
                best = j;
            }
        }
        let tol = tie_tol * (1.0 + value.abs());
        let mut first = best;
        let mut multiplicity = 0;
        for (j, (y, o)) in self.slopes.iter().zip(&self.offsets).enumerate() {
            if dot(*y, v) + o >= value - tol {
                if multiplicity == 0 {
                    first = j;
                }
                multiplicity += 1;
            }
        }
        Argmax { index: first, value, multiplicity }
    }

    /// Largest slope norm, a Lipschitz constant of `k`.
    pub fn lipschitz(&self) -> f64 {
        self.slopes.iter().map(|y| norm(*y)).fold(0.0, f64::max)
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self { offsets: self.offsets.iter().map(|o| o + c).collect(), ..self.clone() }
    }

    /// `k*` as the lower convex envelope of `-offsets` over the slopes.
    pub fn conjugate(&self, dim: usize) -> Envelope {
        let g: Vec<f64> = self.offsets.iter().map(|o| -o).collect();
        Envelope::new(&self.slopes, &g, dim)
    }
}

fn node_points(domain: &Domain) -> Vec<Point> {
    domain.nodes.iter().map(|n| n.point).collect()
}

/// `l -> l^#`.
pub fn sharp(l: &Potential, entropy: &Entropy, domain: &Domain) -> Result<ConjugateMajorant> {
    let offsets = l.values.iter().map(|&x| entropy.conjugate(-x)).collect::<Result<Vec<_>>>()?;
    Ok(ConjugateMajorant { slopes: node_points(domain), offsets, kind: MajorantKind::Sharp })
}

/// `l -> l^&`.
pub fn amp(l: &Potential, domain: &Domain) -> ConjugateMajorant {
    ConjugateMajorant {
        slopes: node_points(domain),
        offsets: l.values.iter().map(|x| -x).collect(),
        kind: MajorantKind::Amp,
    }
}

fn conjugate_at_nodes(k: &ConjugateMajorant, domain: &Domain) -> Result<Vec<f64>> {
    let env = k.conjugate(domain.dim());
    domain
        .nodes
        .iter()
        .enumerate()
        .map(|(j, n)| env.eval(n.point).ok_or(Error::OutsideHull { node: j }))
        .collect()
}

/// `k -> k_#` for a max-of-affine `k`, by exact conjugation.
pub fn flat(k: &ConjugateMajorant, entropy: &Entropy, domain: &Domain) -> Result<Potential> {
    let kstar = conjugate_at_nodes(k, domain)?;
    let values = kstar.iter().map(|&a| entropy.flat_sup(a).map(|(g, _)| g)).collect::<Result<Vec<_>>>()?;
    Ok(Potential { values })
}

/// `k -> k_&` for a max-of-affine `k`, by exact conjugation.
pub fn amp_flat(k: &ConjugateMajorant, domain: &Domain) -> Result<Potential> {
    Ok(Potential { values: conjugate_at_nodes(k, domain)? })
}

/// Uniform grid of force values used by the sampled fallback.
#[derive(Clone, Debug)]
pub struct VGrid {
    pub radius: f64,
    pub per_axis: usize,
}

impl VGrid {
    /// Default radius `4 (|F|_inf + max |div phi|)`.
    pub fn for_inputs(force_sup: f64, div_sup: f64, per_axis: usize) -> Self {
        Self { radius: (4.0 * (force_sup + div_sup)).max(1e-3), per_axis }
    }

    fn points(&self, dim: usize) -> Vec<(Point, bool)> {
        let n = self.per_axis.max(2);
        let coord = |i: usize| -self.radius + 2.0 * self.radius * i as f64 / (n - 1) as f64;
        let mut out = Vec::new();
        if dim == 1 {
            for i in 0..n {
                out.push(([coord(i), 0.0], i == 0 || i == n - 1));
            }
        } else {
            for i in 0..n {
                for j in 0..n {
                    let edge = i == 0 || j == 0 || i == n - 1 || j == n - 1;
                    out.push(([coord(i), coord(j)], edge));
                }
            }
        }
        out
    }
}

fn sampled_conjugate(k: &dyn Fn(Point) -> f64, grid: &VGrid, domain: &Domain) -> Result<Vec<f64>> {
    let pts = grid.points(domain.dim());
    let kv: Vec<f64> = pts.iter().map(|(v, _)| k(*v)).collect();
    domain
        .nodes
        .iter()
        .enumerate()
        .map(|(j, n)| {
            let mut best = f64::NEG_INFINITY;
            let mut on_edge = false;
            for ((v, edge), kv) in pts.iter().zip(&kv) {
                let val = dot(n.point, *v) - kv;
                if val > best {
                    best = val;
                    on_edge = *edge;
                }
            }
            if on_edge {
                Err(Error::UnboundedConjugate { node: j })
            } else {
                Ok(best)
            }
        })
        .collect()
}

/// `k -> k_#` for a black-box `k`, by a discrete Legendre transform on `grid`.
pub fn flat_sampled(k: &dyn Fn(Point) -> f64, grid: &VGrid, entropy: &Entropy, domain: &Domain) -> Result<Potential> {
    let kstar = sampled_conjugate(k, grid, domain)?;
    let values = kstar.iter().map(|&a| entropy.flat_sup(a).map(|(g, _)| g)).collect::<Result<Vec<_>>>()?;
    Ok(Potential { values })
}

/// `k -> k_&` for a black-box `k`.
pub fn amp_flat_sampled(k: &dyn Fn(Point) -> f64, grid: &VGrid, domain: &Domain) -> Result<Potential> {
    Ok(Potential { values: sampled_conjugate(k, grid, domain)? })
}

/// Compressible (`Some(H)`) or incompressible (`None`) transform pair.
pub fn tighten_pair(
    l: &Potential,
    entropy: Option<&Entropy>,
    domain: &Domain,
) -> Result<(ConjugateMajorant, Potential)> {
    match entropy {
        Some(h) => {
            let k = sharp(l, h, domain)?;
            let l2 = flat(&k, h, domain)?;
            Ok((k, l2))
        }
        None => {
            let k = amp(l, domain);
            let l2 = amp_flat(&k, domain)?;
            let m = l2.min();
            Ok((k.shifted(m), l2.shifted(-m)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_domain, DomainSpec, ShapeSpec};

    fn line(n: usize) -> Domain {
        make_domain(DomainSpec {
            dim: 1,
            omega: ShapeSpec::interval(0.5),
            lambda: ShapeSpec::interval(0.5),
            n_cells: 16,
            n_lambda_nodes: n,
            incompressible: true,
        })
        .unwrap()
    }

    #[test]
    fn sharp_of_zero_is_half_norm() {
        let d = line(33);
        let k = sharp(&Potential::zeros(33), &Entropy::base(), &d).unwrap();
        for v in [-2.0, -0.3, 0.0, 1.7] {
            assert!((k.eval([v, 0.0]) - 0.5 * v.abs()).abs() < 1e-14);
        }
    }

    #[test]
    fn sharp_at_zero_is_conjugate_of_s_l() {
        let d = line(9);
        let l = Potential { values: vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.7, -0.1, 0.2, 0.4] };
        let h = Entropy::base();
        let k = sharp(&l, &h, &d).unwrap();
        assert!((k.eval([0.0, 0.0]) - h.conjugate(l.s_l()).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn amp_of_zero_is_support_function() {
        let d = line(33);
        let k = amp(&Potential::zeros(33), &d);
        assert!((k.eval([-3.0, 0.0]) - 1.5).abs() < 1e-15);
        assert_eq!(k.eval([0.0, 0.0]), 0.0);
    }

    #[test]
    fn flat_of_zero_sharp_is_zero() {
        let d = line(17);
        let h = Entropy::base();
        let k = sharp(&Potential::zeros(17), &h, &d).unwrap();
        let l = flat(&k, &h, &d).unwrap();
        assert!(l.values.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn flat_is_below_potential() {
        let d = line(9);
        let h = Entropy::base();
        let l = Potential { values: vec![0.3, 2.0, -0.5, 0.1, 1.0, 0.7, -0.1, 3.2, 0.4] };
        let lf = flat(&sharp(&l, &h, &d).unwrap(), &h, &d).unwrap();
        for (a, b) in lf.values.iter().zip(&l.values) {
            assert!(a <= &(b + 1e-10));
        }
        // concave bumps are removed
        assert!(lf.values[1] < 2.0 - 1e-3);
    }

    #[test]
    fn sampled_flat_agrees_with_exact() {
        let d = line(9);
        let h = Entropy::base();
        let l = Potential { values: vec![0.3, 0.1, -0.2, 0.0, 0.2, 0.1, 0.3, 0.6, 0.9] };
        let k = sharp(&l, &h, &d).unwrap();
        let exact = flat(&k, &h, &d).unwrap();
        let grid = VGrid { radius: 40.0, per_axis: 40_001 };
        let approx = flat_sampled(&|v| k.eval(v), &grid, &h, &d).unwrap();
        for (a, b) in exact.values.iter().zip(&approx.values) {
            assert!((a - b).abs() < 1e-3, "{a} {b}");
        }
        let small = VGrid { radius: 0.01, per_axis: 11 };
        assert!(matches!(flat_sampled(&|v| k.eval(v), &small, &h, &d), Err(Error::UnboundedConjugate { .. })));
    }

    #[test]
    fn incompressible_pair_is_normalized() {
        let d = line(9);
        let l = Potential { values: vec![0.3, 0.9, 0.5, 0.4, 1.0, 0.7, 0.6, 0.2, 0.4] };
        let (k, l2) = tighten_pair(&l, None, &d).unwrap();
        assert!(l2.min().abs() < 1e-15);
        assert!(k.eval([0.0, 0.0]).abs() < 1e-12);
    }
}
