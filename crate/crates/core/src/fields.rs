//! Scalar functions and vertical vector fields, described as data so that
//! they can be read from configuration and evaluated on jets.

use crate::error::{Error, Result};
use crate::jet::Scalar;
use crate::models::{ModelKind, ModelSpec};
use crate::quat::Quat;
use serde::{Deserialize, Serialize};

/// `e(s) / (e(s) + e(1 - s))` with `e(s) = exp(-1/s)`; 0 for `s <= 0`, 1 for `s >= 1`.
pub fn smooth_step<S: Scalar>(s: S) -> S {
    let v = s.value();
    if v <= 0.0 {
        S::zero()
    } else if v >= 1.0 {
        S::one()
    } else {
        let a = (-s.recip()).exp();
        let b = (-(-s + 1.0).recip()).exp();
        a / (a + b)
    }
}

/// Derivative of [`smooth_step`].
pub fn smooth_step_deriv<S: Scalar>(s: S) -> S {
    let v = s.value();
    if v <= 0.0 || v >= 1.0 {
        S::zero()
    } else {
        let r = -s + 1.0;
        let a = (-s.recip()).exp();
        let b = (-r.recip()).exp();
        let da = a / (s * s);
        let db = b / (r * r);
        (da * b + a * db) / ((a + b) * (a + b))
    }
}

/// Smooth bump: 1 within `r_in` of `center`, 0 beyond `r_out`, a function of
/// squared Euclidean distance so it stays smooth at the center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: Vec<f64>,
    pub r_in: f64,
    pub r_out: f64,
}

impl Bump {
    pub fn new(center: Vec<f64>, r_in: f64, r_out: f64) -> Result<Self> {
        if !(r_in > 0.0 && r_out > r_in && r_out.is_finite()) {
            return Err(Error::Invalid(format!("bump radii must satisfy 0 < {r_in} < {r_out}")));
        }
        Ok(Bump { center, r_in, r_out })
    }

    pub fn eval<S: Scalar>(&self, p: &[S]) -> S {
        let mut r2 = S::zero();
        for (x, c) in p.iter().zip(&self.center) {
            let d = *x - *c;
            r2 += d * d;
        }
        let s = (r2 * -1.0 + self.r_out * self.r_out) / (self.r_out * self.r_out - self.r_in * self.r_in);
        smooth_step(s)
    }
}

/// Scalar function of a point of the total space. `Coord` reads the ambient
/// (or angle) coordinates of the point, `BaseCoord` those of its projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalarExpr {
    Const { value: f64 },
    Coord { index: usize },
    BaseCoord { index: usize },
    Sin { arg: Box<ScalarExpr> },
    Cos { arg: Box<ScalarExpr> },
    Exp { arg: Box<ScalarExpr> },
    Sum { terms: Vec<ScalarExpr> },
    Product { factors: Vec<ScalarExpr> },
    Scale { factor: f64, expr: Box<ScalarExpr> },
    Bump { bump: Bump, on_base: bool },
}

impl ScalarExpr {
    pub fn constant(value: f64) -> Self {
        ScalarExpr::Const { value }
    }
    pub fn coord(index: usize) -> Self {
        ScalarExpr::Coord { index }
    }
    pub fn base_coord(index: usize) -> Self {
        ScalarExpr::BaseCoord { index }
    }
    pub fn sin(e: ScalarExpr) -> Self {
        ScalarExpr::Sin { arg: Box::new(e) }
    }
    pub fn cos(e: ScalarExpr) -> Self {
        ScalarExpr::Cos { arg: Box::new(e) }
    }
    pub fn exp(e: ScalarExpr) -> Self {
        ScalarExpr::Exp { arg: Box::new(e) }
    }
    pub fn scale(factor: f64, e: ScalarExpr) -> Self {
        ScalarExpr::Scale { factor, expr: Box::new(e) }
    }
    pub fn sum(terms: Vec<ScalarExpr>) -> Self {
        ScalarExpr::Sum { terms }
    }
    pub fn product(factors: Vec<ScalarExpr>) -> Self {
        ScalarExpr::Product { factors }
    }

    /// True if the expression never reads total-space coordinates.
    pub fn is_basic(&self) -> bool {
        match self {
            ScalarExpr::Const { .. } | ScalarExpr::BaseCoord { .. } => true,
            ScalarExpr::Coord { .. } => false,
            ScalarExpr::Sin { arg } | ScalarExpr::Cos { arg } | ScalarExpr::Exp { arg } => arg.is_basic(),
            ScalarExpr::Scale { expr, .. } => expr.is_basic(),
            ScalarExpr::Sum { terms } => terms.iter().all(|t| t.is_basic()),
            ScalarExpr::Product { factors } => factors.iter().all(|t| t.is_basic()),
            ScalarExpr::Bump { on_base, .. } => *on_base,
        }
    }

    /// Evaluates at total-space point `x` whose projection is `y`.
    pub fn eval<S: Scalar>(&self, x: &[S], y: &[S]) -> S {
        match self {
            ScalarExpr::Const { value } => S::cst(*value),
            ScalarExpr::Coord { index } => x[*index],
            ScalarExpr::BaseCoord { index } => y[*index],
            ScalarExpr::Sin { arg } => arg.eval(x, y).sin(),
            ScalarExpr::Cos { arg } => arg.eval(x, y).cos(),
            ScalarExpr::Exp { arg } => arg.eval(x, y).exp(),
            ScalarExpr::Sum { terms } => {
                let mut s = S::zero();
                for t in terms {
                    s += t.eval(x, y);
                }
                s
            }
            ScalarExpr::Product { factors } => {
                let mut s = S::one();
                for t in factors {
                    s *= t.eval(x, y);
                }
                s
            }
            ScalarExpr::Scale { factor, expr } => expr.eval(x, y) * *factor,
            ScalarExpr::Bump { bump, on_base } => bump.eval(if *on_base { y } else { x }),
        }
    }

    pub fn validate(&self, ambient: usize, base: usize) -> Result<()> {
        match self {
            ScalarExpr::Const { .. } => Ok(()),
            ScalarExpr::Coord { index } if *index < ambient => Ok(()),
            ScalarExpr::BaseCoord { index } if *index < base => Ok(()),
            ScalarExpr::Coord { index } | ScalarExpr::BaseCoord { index } => {
                Err(Error::Invalid(format!("coordinate index {index} out of range")))
            }
            ScalarExpr::Sin { arg } | ScalarExpr::Cos { arg } | ScalarExpr::Exp { arg } => arg.validate(ambient, base),
            ScalarExpr::Scale { expr, .. } => expr.validate(ambient, base),
            ScalarExpr::Sum { terms } => terms.iter().try_for_each(|t| t.validate(ambient, base)),
            ScalarExpr::Product { factors } => factors.iter().try_for_each(|t| t.validate(ambient, base)),
            ScalarExpr::Bump { bump, on_base } => {
                let want = if *on_base { base } else { ambient };
                if bump.center.len() != want {
                    return Err(Error::Invalid(format!("bump center has length {}, expected {want}", bump.center.len())));
                }
                Bump::new(bump.center.clone(), bump.r_in, bump.r_out).map(|_| ())
            }
        }
    }
}

/// Vertical vector field on the total space, evaluated as coefficients in the
/// adapted vertical frame `E_1..E_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VerticalField {
    Zero,
    /// Adapted frame vector `E_a` (0-based).
    Frame { index: usize },
    /// Angle coordinate field on torus models.
    Coordinate { index: usize },
    /// Fiberwise Killing field `x * conj(u) * iota_a * u`, `u = q1/|q1|`, on the S^7 model.
    Xi { index: usize },
    /// Stream field of `psi = amplitude * sin(k1 theta_1) sin(k2 theta_2)` on torus fibers, n >= 2.
    Stream { amplitude: f64, k1: f64, k2: f64 },
    /// Divergence-free field on S^3 fibers supported in a cap around `center`.
    FiberCurl { center: [f64; 4], s_in: f64, s_out: f64, amplitude: f64 },
    Scaled { factor: ScalarExpr, field: Box<VerticalField> },
    Sum { fields: Vec<VerticalField> },
}

impl VerticalField {
    pub fn scaled(factor: ScalarExpr, field: VerticalField) -> Self {
        VerticalField::Scaled { factor, field: Box::new(field) }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            VerticalField::Zero => true,
            VerticalField::Scaled { factor: ScalarExpr::Const { value }, field } => *value == 0.0 || field.is_zero(),
            VerticalField::Scaled { field, .. } => field.is_zero(),
            VerticalField::Sum { fields } => fields.iter().all(|f| f.is_zero()),
            _ => false,
        }
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let n = model.n();
        match self {
            VerticalField::Zero => Ok(()),
            VerticalField::Frame { index } if *index < n => Ok(()),
            VerticalField::Frame { index } => Err(Error::Invalid(format!("frame index {index} >= n = {n}"))),
            VerticalField::Coordinate { index } => match model.kind {
                ModelKind::FlatTorus { .. } | ModelKind::WarpedTorus { .. } if *index < n => Ok(()),
                ModelKind::FlatTorus { .. } | ModelKind::WarpedTorus { .. } => {
                    Err(Error::Invalid(format!("coordinate index {index} >= n = {n}")))
                }
                _ => Err(Error::Unsupported("coordinate fields exist only on torus models".into())),
            },
            VerticalField::Xi { index } => match model.kind {
                ModelKind::HopfS7 if *index < 3 => Ok(()),
                ModelKind::HopfS7 => Err(Error::Invalid(format!("xi index {index} >= 3"))),
                _ => Err(Error::Unsupported("xi fields exist only on hopf-s7".into())),
            },
            VerticalField::Stream { .. } => match model.kind {
                ModelKind::FlatTorus { .. } | ModelKind::WarpedTorus { .. } if n >= 2 => Ok(()),
                _ => Err(Error::Unsupported("stream fields need a torus model with n >= 2".into())),
            },
            VerticalField::FiberCurl { s_in, s_out, .. } => match model.kind {
                ModelKind::HopfS7 if 0.0 <= *s_in && s_in < s_out && *s_out <= 2.0 => Ok(()),
                ModelKind::HopfS7 => Err(Error::Invalid("fiber-curl needs 0 <= s_in < s_out <= 2".into())),
                _ => Err(Error::Unsupported("fiber-curl fields exist only on hopf-s7".into())),
            },
            VerticalField::Scaled { factor, field } => {
                factor.validate(model.ambient_dim(), model.base_ambient_dim())?;
                field.validate(model)
            }
            VerticalField::Sum { fields } => fields.iter().try_for_each(|f| f.validate(model)),
        }
    }

    /// Frame coefficients at `x` (projection `y`).
    pub fn coeffs<S: Scalar>(&self, model: &ModelSpec, x: &[S], y: &[S]) -> Vec<S> {
        let n = model.n();
        match self {
            VerticalField::Zero => vec![S::zero(); n],
            VerticalField::Frame { index } => {
                let mut c = vec![S::zero(); n];
                c[*index] = S::one();
                c
            }
            VerticalField::Coordinate { index } => {
                let mut c = vec![S::zero(); n];
                c[*index] = model.warp(x).exp();
                c
            }
            VerticalField::Xi { index } => {
                let u = s7_fiber_coordinate(x);
                let q = u.conj() * Quat::basis(index + 1) * u;
                vec![q.x, q.y, q.z]
            }
            VerticalField::Stream { amplitude, k1, k2 } => {
                let (a1, a2) = (x[0] * *k1, x[1] * *k2);
                let d1 = a1.cos() * a2.sin() * (amplitude * k1);
                let d2 = a1.sin() * a2.cos() * (amplitude * k2);
                let w = (model.warp(x) * (1.0 - n as f64)).exp();
                let mut c = vec![S::zero(); n];
                c[0] = d2 * w;
                c[1] = -d1 * w;
                c
            }
            VerticalField::FiberCurl { center, s_in, s_out, amplitude } => {
                let u = s7_fiber_coordinate(x);
                let u0 = Quat::new(S::cst(center[0]), S::cst(center[1]), S::cst(center[2]), S::cst(center[3]));
                let s = -u.dot(u0) + 1.0;
                let width = s_out - s_in;
                let sigma = (-s + *s_out) / width;
                let beta = smooth_step(sigma) * *amplitude;
                let dbeta = smooth_step_deriv(sigma) * (-amplitude / width);
                let ds = |a: usize| -(u * Quat::basis(a)).dot(u0);
                vec![-(dbeta * ds(2)), dbeta * ds(1), beta * 2.0]
            }
            VerticalField::Scaled { factor, field } => {
                let f = factor.eval(x, y);
                field.coeffs(model, x, y).into_iter().map(|c| c * f).collect()
            }
            VerticalField::Sum { fields } => {
                let mut c = vec![S::zero(); n];
                for f in fields {
                    for (ci, fi) in c.iter_mut().zip(f.coeffs(model, x, y)) {
                        *ci += fi;
                    }
                }
                c
            }
        }
    }
}

/// `u = q1 / |q1|` for a point `x = (q1, q2)` of S^7.
pub(crate) fn s7_fiber_coordinate<S: Scalar>(x: &[S]) -> Quat<S> {
    let q1 = Quat::from_slice(&x[0..4]);
    q1.scale(q1.norm2().sqrt().recip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{Jet2, Scalar};

    #[test]
    fn smooth_step_limits_and_derivative() {
        assert_eq!(smooth_step(0.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        for &s in &[0.1, 0.3, 0.62, 0.9] {
            let h = 1e-6;
            let fd = (smooth_step(s + h) - smooth_step(s - h)) / (2.0 * h);
            assert!((fd - smooth_step_deriv(s)).abs() < 1e-7);
            let j = smooth_step(Jet2::seed(s, 0, 1));
            assert!((j.g[0] - smooth_step_deriv(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn bump_values() {
        let b = Bump::new(vec![0.0, 0.0], 0.2, 0.5).unwrap();
        assert_eq!(b.eval(&[0.0, 0.0]), 1.0);
        assert_eq!(b.eval(&[0.1, 0.1]), 1.0);
        let out = b.eval(&[Jet2::seed(0.6, 0, 2), Jet2::seed(0.0, 1, 2)]);
        assert_eq!(out.value(), 0.0);
        assert!(out.grad().iter().all(|g| *g == 0.0));
        assert_eq!(out.hess(0, 0), 0.0);
        let mid = b.eval(&[0.35, 0.0]);
        assert!(mid > 0.0 && mid < 1.0);
        assert!(Bump::new(vec![0.0], 0.5, 0.2).is_err());
    }

    #[test]
    fn expr_eval_and_basic() {
        let e = ScalarExpr::product(vec![ScalarExpr::sin(ScalarExpr::coord(0)), ScalarExpr::base_coord(1)]);
        assert_eq!(e.eval(&[0.5, 0.0], &[0.0, 2.0]), 0.5f64.sin() * 2.0);
        assert!(!e.is_basic());
        assert!(ScalarExpr::base_coord(0).is_basic());
    }
}
