//! Radial convex integrands `f` with closed-form conjugates, and the entropy
//! `H(t) = t^2/2 + 1/t - 3/2` together with its penalized family `H_n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob, mat_scale, Mat, ZERO_MAT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Power { p: f64 },
    AbsoluteValue,
}

/// Constants `(a, b, c)` with `c|xi|^p/p + b >= f(xi) >= a|xi| - b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// `f(xi) = scale * g(|xi|)` with `g(r) = r^p/p` or `g(r) = r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexIntegrand {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl ConvexIntegrand {
    pub fn power(p: f64) -> Self {
        assert!(p > 1.0 && p.is_finite(), "power family needs p > 1");
        Self { family: Family::Power { p }, scale: 1.0 }
    }

    pub fn quadratic() -> Self {
        Self::power(2.0)
    }

    pub fn absolute_value() -> Self {
        Self { family: Family::AbsoluteValue, scale: 1.0 }
    }

    pub fn scaled(self, scale: f64) -> Self {
        assert!(scale > 0.0 && scale.is_finite(), "scale must be positive");
        Self { scale, ..self }
    }

    /// Growth exponent; the absolute value is bounded with `p = 2`.
    pub fn p(&self) -> f64 {
        match self.family {
            Family::Power { p } => p,
            Family::AbsoluteValue => 2.0,
        }
    }

    pub fn q(&self) -> f64 {
        let p = self.p();
        p / (p - 1.0)
    }

    pub fn is_strictly_convex(&self) -> bool {
        matches!(self.family, Family::Power { .. })
    }

    pub fn growth(&self) -> Growth {
        let s = self.scale;
        match self.family {
            Family::Power { .. } => Growth { a: s, b: s / self.q(), c: s },
            Family::AbsoluteValue => Growth { a: s, b: 0.5 * s, c: s },
        }
    }

    pub fn f_eval(&self, xi: &Mat) -> f64 {
        let r = frob(xi);
        match self.family {
            Family::Power { p } => self.scale * r.powf(p) / p,
            Family::AbsoluteValue => self.scale * r,
        }
    }

    /// `f*(zeta)`, `+inf` outside the domain for the absolute value.
    pub fn f_conj(&self, zeta: &Mat) -> f64 {
        let r = frob(zeta);
        let s = self.scale;
        match self.family {
            Family::Power { .. } => {
                let q = self.q();
                s * (r / s).powf(q) / q
            }
            Family::AbsoluteValue => {
                if r <= s {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn in_conj_domain(&self, zeta: &Mat) -> bool {
        match self.family {
            Family::Power { .. } => true,
            Family::AbsoluteValue => frob(zeta) <= self.scale * (1.0 + 1e-12),
        }
    }

    pub fn grad_fstar_minnorm(&self, zeta: &Mat) -> Result<Mat> {
        let r = frob(zeta);
        match self.family {
            Family::Power { .. } => {
                if r == 0.0 {
                    return Ok(ZERO_MAT);
                }
                let s = self.scale;
                let q = self.q();
                Ok(mat_scale((r / s).powf(q - 2.0) / s, zeta))
            }
            Family::AbsoluteValue => {
                if r <= self.scale * (1.0 + 1e-12) {
                    Ok(ZERO_MAT)
                } else {
                    Err(Error::OutsideConjugateDomain { norm: r })
                }
            }
        }
    }

    /// `Df(xi)` for the power family; minimal-norm subgradient for the absolute value.
    pub fn df(&self, xi: &Mat) -> Mat {
        let r = frob(xi);
        if r == 0.0 {
            return ZERO_MAT;
        }
        match self.family {
            Family::Power { p } => mat_scale(self.scale * r.powf(p - 2.0), xi),
            Family::AbsoluteValue => mat_scale(self.scale / r, xi),
        }
    }
}

/// `H_n(t) = H(t) - H(1) + n (t-1)^2`; `penalty = 0` is the base entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Entropy {
    pub penalty: u32,
}

const NEWTON_CAP: usize = 100;

impl Entropy {
    pub fn base() -> Self {
        Self { penalty: 0 }
    }

    pub fn penalized(n: u32) -> Self {
        Self { penalty: n }
    }

    fn pen(&self) -> f64 {
        self.penalty as f64
    }

    /// `min H`, attained at `t = 1`.
    pub fn min_value(&self) -> f64 {
        0.0
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::NonPositiveDensity(t));
        }
        Ok(self.raw(t))
    }

    fn raw(&self, t: f64) -> f64 {
        0.5 * t * t + 1.0 / t - 1.5 + self.pen() * (t - 1.0) * (t - 1.0)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        t - 1.0 / (t * t) + 2.0 * self.pen() * (t - 1.0)
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        1.0 + 2.0 / (t * t * t) + 2.0 * self.pen()
    }

    /// Solves `H'(t) = s`.
    pub fn derivative_inverse(&self, s: f64) -> Result<f64> {
        solve_decreasing(
            |t| s - self.derivative(t),
            |t| -self.second_derivative(t),
            "H' inverse",
            s,
        )
    }

    /// `H*(s) = sup_t (s t - H(t))`.
    pub fn conjugate(&self, s: f64) -> Result<f64> {
        let t = self.derivative_inverse(s)?;
        Ok(s * t - self.raw(t))
    }

    /// `sup_{t>0} (a - H(t))/t`, attained where `H(t) - t H'(t) = a`, equal to `-H'(t)` there.
    pub fn flat_sup(&self, a: f64) -> Result<(f64, f64)> {
        let n = self.pen();
        let psi = |t: f64| -0.5 * t * t + 2.0 / t - 1.5 + n * (1.0 - t * t);
        let dpsi = |t: f64| -t * self.second_derivative(t);
        let t = solve_decreasing(|t| psi(t) - a, dpsi, "flat supremum", a)?;
        Ok((-self.derivative(t), t))
    }
}

/// Root of a strictly decreasing function on `(0, inf)` from `+inf` to `-inf`.
fn solve_decreasing(
    g: impl Fn(f64) -> f64,
    dg: impl Fn(f64) -> f64,
    what: &'static str,
    arg: f64,
) -> Result<f64> {
    if !arg.is_finite() {
        return Err(Error::NewtonFailure { what, arg });
    }
    let (mut lo, mut hi) = (0.5_f64, 2.0_f64);
    let mut grow = 0;
    while g(lo) <= 0.0 {
        lo *= 0.25;
        grow += 1;
        if grow > 200 {
            return Err(Error::NewtonFailure { what, arg });
        }
    }
    while g(hi) >= 0.0 {
        hi *= 4.0;
        grow += 1;
        if grow > 400 {
            return Err(Error::NewtonFailure { what, arg });
        }
    }
    let mut t = (lo * hi).sqrt();
    for _ in 0..NEWTON_CAP {
        let gt = g(t);
        if gt == 0.0 {
            return Ok(t);
        }
        if gt > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let step = gt / dg(t);
        let mut next = t - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-15 * t.max(1e-300) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        t = next;
    }
    let gt = g(t);
    if gt.abs() <= 1e-12 * (1.0 + arg.abs()) {
        Ok(t)
    } else {
        Err(Error::NewtonFailure { what, arg })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(x: f64) -> Mat {
        [[x, 0.0], [0.0, 0.0]]
    }

    #[test]
    fn quadratic_is_self_conjugate() {
        let f = ConvexIntegrand::quadratic();
        let xi = [[2.0_f64.sqrt(), 0.0], [0.0, 2.0_f64.sqrt()]];
        assert!((f.f_eval(&xi) - 2.0).abs() < 1e-14);
        assert!((f.f_conj(&xi) - 2.0).abs() < 1e-14);
        assert_eq!(f.grad_fstar_minnorm(&xi).unwrap(), xi);
    }

    #[test]
    fn absolute_value_conjugate_is_ball_indicator() {
        let f = ConvexIntegrand::absolute_value();
        assert_eq!(f.f_conj(&diag(0.5)), 0.0);
        assert_eq!(f.f_conj(&diag(1.5)), f64::INFINITY);
        assert_eq!(f.grad_fstar_minnorm(&diag(0.7)).unwrap(), ZERO_MAT);
        assert!(f.grad_fstar_minnorm(&diag(1.5)).is_err());
    }

    #[test]
    fn zero_arguments() {
        for f in [ConvexIntegrand::quadratic(), ConvexIntegrand::power(4.0), ConvexIntegrand::absolute_value()] {
            assert_eq!(f.f_eval(&ZERO_MAT), 0.0);
            assert_eq!(f.f_conj(&ZERO_MAT), 0.0);
        }
        assert_eq!(ConvexIntegrand::power(4.0).grad_fstar_minnorm(&ZERO_MAT).unwrap(), ZERO_MAT);
    }

    #[test]
    fn entropy_examples() {
        let h = Entropy::base();
        assert_eq!(h.value(1.0).unwrap(), 0.0);
        assert!((h.value(2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(h.conjugate(0.0).unwrap().abs() < 1e-14);
        assert!((h.derivative_inverse(0.0).unwrap() - 1.0).abs() < 1e-14);
        assert!(h.value(0.0).is_err());
        assert!(h.value(-1.0).is_err());
        let h4 = Entropy::penalized(4);
        assert!((h4.value(2.0).unwrap() - 5.0).abs() < 1e-14);
        for n in 1..10 {
            assert_eq!(Entropy::penalized(n).value(1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn inverse_derivative_wide_range() {
        for n in [0, 1, 64] {
            let h = Entropy::penalized(n);
            for k in -200..=200 {
                let s = 5.0 * k as f64;
                let t = h.derivative_inverse(s).unwrap();
                assert!((h.derivative(t) - s).abs() <= 1e-10, "s={s} t={t}");
            }
        }
    }

    #[test]
    fn flat_sup_matches_scan() {
        let h = Entropy::base();
        for a in [-3.0, -0.5, 0.0, 0.7, 2.0] {
            let (g, t) = h.flat_sup(a).unwrap();
            let mut best = f64::NEG_INFINITY;
            let mut s = 1e-3;
            while s < 50.0 {
                best = best.max((a - h.raw(s)) / s);
                s *= 1.0005;
            }
            assert!(g >= best - 1e-9 && g <= best + 1e-5, "a={a}: {g} vs {best}");
            assert!(((a - h.raw(t)) / t - g).abs() < 1e-10);
        }
    }
}
