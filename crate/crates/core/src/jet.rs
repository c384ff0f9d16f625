//! Forward-mode jets of order one and two over at most [`MAX_DIM`] variables.
//!
//! `Jet2` carries value, gradient and a packed symmetric Hessian; `Jet1` carries
//! value and gradient. Both implement [`Scalar`], so geometric code written once
//! over `S: Scalar` runs on plain `f64` or on jets.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub const MAX_DIM: usize = 8;
const PACKED: usize = MAX_DIM * (MAX_DIM + 1) / 2;

#[inline]
fn pidx(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    b * (b + 1) / 2 + a
}

pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    /// Independent variable number `k` of `dim`, evaluated at `v`.
    fn seed(v: f64, k: usize, dim: usize) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn recip(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn powi(self, n: u32) -> Self {
        let mut r = Self::one();
        for _ in 0..n {
            r = r * self;
        }
        r
    }
}

/// A scalar that can be differentiated once, dropping one order.
pub trait Differentiable: Scalar {
    type Lower: Scalar;
    fn lower(&self) -> Self::Lower;
    fn partial(&self, k: usize) -> Self::Lower;
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn seed(v: f64, _k: usize, _dim: usize) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet1 {
    pub v: f64,
    pub g: [f64; MAX_DIM],
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub g: [f64; MAX_DIM],
    h: [f64; PACKED],
    pub dim: usize,
}

impl Jet1 {
    pub fn constant(v: f64) -> Self {
        Jet1 { v, g: [0.0; MAX_DIM], dim: 0 }
    }

    pub fn grad(&self) -> &[f64] {
        &self.g[..self.dim]
    }

    fn chain(self, f: f64, df: f64) -> Self {
        let mut g = [0.0; MAX_DIM];
        for k in 0..self.dim {
            g[k] = df * self.g[k];
        }
        Jet1 { v: f, g, dim: self.dim }
    }
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Jet2 { v, g: [0.0; MAX_DIM], h: [0.0; PACKED], dim: 0 }
    }

    pub fn grad(&self) -> &[f64] {
        &self.g[..self.dim]
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.h[pidx(i, j)]
    }

    /// Builds a jet from explicit value, gradient and full Hessian rows.
    pub fn from_parts(v: f64, grad: &[f64], hess: &[Vec<f64>]) -> Self {
        let dim = grad.len();
        assert!(dim <= MAX_DIM);
        let mut j = Jet2::constant(v);
        j.dim = dim;
        j.g[..dim].copy_from_slice(grad);
        for a in 0..dim {
            for b in a..dim {
                j.h[pidx(a, b)] = 0.5 * (hess[a][b] + hess[b][a]);
            }
        }
        j
    }

    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        let d = self.dim;
        let mut out = Jet2 { v: f, g: [0.0; MAX_DIM], h: [0.0; PACKED], dim: d };
        for k in 0..d {
            out.g[k] = df * self.g[k];
        }
        for b in 0..d {
            for a in 0..=b {
                let p = b * (b + 1) / 2 + a;
                out.h[p] = df * self.h[p] + d2f * self.g[a] * self.g[b];
            }
        }
        out
    }
}

impl Scalar for Jet1 {
    fn cst(v: f64) -> Self {
        Jet1::constant(v)
    }
    fn seed(v: f64, k: usize, dim: usize) -> Self {
        assert!(k < dim && dim <= MAX_DIM);
        let mut j = Jet1::constant(v);
        j.dim = dim;
        j.g[k] = 1.0;
        j
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r)
    }
}

impl Scalar for Jet2 {
    fn cst(v: f64) -> Self {
        Jet2::constant(v)
    }
    fn seed(v: f64, k: usize, dim: usize) -> Self {
        assert!(k < dim && dim <= MAX_DIM);
        let mut j = Jet2::constant(v);
        j.dim = dim;
        j.g[k] = 1.0;
        j
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl Differentiable for Jet1 {
    type Lower = f64;
    fn lower(&self) -> f64 {
        self.v
    }
    fn partial(&self, k: usize) -> f64 {
        self.g[k]
    }
}

impl Differentiable for Jet2 {
    type Lower = Jet1;
    fn lower(&self) -> Jet1 {
        Jet1 { v: self.v, g: self.g, dim: self.dim }
    }
    fn partial(&self, k: usize) -> Jet1 {
        let mut g = [0.0; MAX_DIM];
        for (m, gm) in g.iter_mut().enumerate().take(self.dim) {
            *gm = self.h[pidx(k, m)];
        }
        Jet1 { v: self.g[k], g, dim: self.dim }
    }
}

macro_rules! jet_common_ops {
    ($t:ident) => {
        impl Add<f64> for $t {
            type Output = $t;
            fn add(mut self, r: f64) -> $t {
                self.v += r;
                self
            }
        }
        impl Sub<f64> for $t {
            type Output = $t;
            fn sub(mut self, r: f64) -> $t {
                self.v -= r;
                self
            }
        }
        impl Div<f64> for $t {
            type Output = $t;
            fn div(self, r: f64) -> $t {
                self * (1.0 / r)
            }
        }
        impl Sub for $t {
            type Output = $t;
            fn sub(self, r: $t) -> $t {
                self + (-r)
            }
        }
        impl Div for $t {
            type Output = $t;
            fn div(self, r: $t) -> $t {
                self * r.recip()
            }
        }
        impl AddAssign for $t {
            fn add_assign(&mut self, r: $t) {
                *self = *self + r;
            }
        }
        impl SubAssign for $t {
            fn sub_assign(&mut self, r: $t) {
                *self = *self - r;
            }
        }
        impl MulAssign for $t {
            fn mul_assign(&mut self, r: $t) {
                *self = *self * r;
            }
        }
        impl Add<$t> for f64 {
            type Output = $t;
            fn add(self, r: $t) -> $t {
                r + self
            }
        }
        impl Sub<$t> for f64 {
            type Output = $t;
            fn sub(self, r: $t) -> $t {
                (-r) + self
            }
        }
        impl Mul<$t> for f64 {
            type Output = $t;
            fn mul(self, r: $t) -> $t {
                r * self
            }
        }
        impl Div<$t> for f64 {
            type Output = $t;
            fn div(self, r: $t) -> $t {
                r.recip() * self
            }
        }
    };
}

jet_common_ops!(Jet1);
jet_common_ops!(Jet2);

impl Add for Jet1 {
    type Output = Jet1;
    fn add(mut self, r: Jet1) -> Jet1 {
        let d = self.dim.max(r.dim);
        self.v += r.v;
        for k in 0..d {
            self.g[k] += r.g[k];
        }
        self.dim = d;
        self
    }
}

impl Neg for Jet1 {
    type Output = Jet1;
    fn neg(mut self) -> Jet1 {
        self.v = -self.v;
        for k in 0..self.dim {
            self.g[k] = -self.g[k];
        }
        self
    }
}

impl Mul for Jet1 {
    type Output = Jet1;
    fn mul(self, r: Jet1) -> Jet1 {
        let d = self.dim.max(r.dim);
        let mut g = [0.0; MAX_DIM];
        for k in 0..d {
            g[k] = self.v * r.g[k] + r.v * self.g[k];
        }
        Jet1 { v: self.v * r.v, g, dim: d }
    }
}

impl Mul<f64> for Jet1 {
    type Output = Jet1;
    fn mul(mut self, r: f64) -> Jet1 {
        self.v *= r;
        for k in 0..self.dim {
            self.g[k] *= r;
        }
        self
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(mut self, r: Jet2) -> Jet2 {
        let d = self.dim.max(r.dim);
        self.v += r.v;
        for k in 0..d {
            self.g[k] += r.g[k];
        }
        for p in 0..d * (d + 1) / 2 {
            self.h[p] += r.h[p];
        }
        self.dim = d;
        self
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(mut self) -> Jet2 {
        let d = self.dim;
        self.v = -self.v;
        for k in 0..d {
            self.g[k] = -self.g[k];
        }
        for p in 0..d * (d + 1) / 2 {
            self.h[p] = -self.h[p];
        }
        self
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, r: Jet2) -> Jet2 {
        let d = self.dim.max(r.dim);
        let mut out = Jet2 { v: self.v * r.v, g: [0.0; MAX_DIM], h: [0.0; PACKED], dim: d };
        for k in 0..d {
            out.g[k] = self.v * r.g[k] + r.v * self.g[k];
        }
        for b in 0..d {
            for a in 0..=b {
                let p = b * (b + 1) / 2 + a;
                out.h[p] = self.v * r.h[p]
                    + r.v * self.h[p]
                    + self.g[a] * r.g[b]
                    + self.g[b] * r.g[a];
            }
        }
        out
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    fn mul(mut self, r: f64) -> Jet2 {
        let d = self.dim;
        self.v *= r;
        for k in 0..d {
            self.g[k] *= r;
        }
        for p in 0..d * (d + 1) / 2 {
            self.h[p] *= r;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars2(x: &[f64]) -> Vec<Jet2> {
        x.iter().enumerate().map(|(k, &v)| Jet2::seed(v, k, x.len())).collect()
    }

    #[test]
    fn constant_has_no_derivatives() {
        let c = Jet2::cst(1.0) * Jet2::seed(0.0, 0, 3) * 0.0 + 1.0;
        assert_eq!(c.value(), 1.0);
        assert!(c.grad().iter().all(|g| *g == 0.0));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c.hess(i, j), 0.0);
            }
        }
    }

    #[test]
    fn product_of_coordinates() {
        let x = vars2(&[0.0, 0.0, 0.0]);
        let f = x[0] * x[1];
        assert_eq!(f.grad(), &[0.0, 0.0, 0.0]);
        assert_eq!(f.hess(0, 1), 1.0);
        assert_eq!(f.hess(1, 0), 1.0);
        assert_eq!(f.hess(0, 0), 0.0);
        assert_eq!(f.hess(2, 2), 0.0);
    }

    #[test]
    fn polynomial_derivatives_exact() {
        let x = vars2(&[1.5, -0.5]);
        // f = x^3 y^2 + 2 x y
        let f = x[0].powi(3) * x[1].powi(2) + x[0] * x[1] * 2.0;
        let (a, b) = (1.5f64, -0.5f64);
        assert!((f.value() - (a.powi(3) * b * b + 2.0 * a * b)).abs() < 1e-14);
        assert!((f.g[0] - (3.0 * a * a * b * b + 2.0 * b)).abs() < 1e-13);
        assert!((f.g[1] - (2.0 * a.powi(3) * b + 2.0 * a)).abs() < 1e-13);
        assert!((f.hess(0, 0) - 6.0 * a * b * b).abs() < 1e-13);
        assert!((f.hess(0, 1) - (6.0 * a * a * b + 2.0)).abs() < 1e-13);
        assert!((f.hess(1, 1) - 2.0 * a.powi(3)).abs() < 1e-13);
    }

    #[test]
    fn partial_lowers_order() {
        let x = vars2(&[0.3, 0.7]);
        let f = (x[0] * x[1]).sin();
        let fx = f.partial(0);
        // d/dx sin(xy) = y cos(xy)
        let (a, b) = (0.3f64, 0.7f64);
        assert!((fx.v - b * (a * b).cos()).abs() < 1e-14);
        assert!((fx.g[1] - ((a * b).cos() - a * b * (a * b).sin())).abs() < 1e-14);
        let fxy = fx.partial(1);
        assert!((fxy - f.hess(0, 1)).abs() < 1e-15);
    }

    #[test]
    fn mixed_order_dims_promote() {
        let a = Jet1::seed(2.0, 1, 3);
        let b = Jet1::cst(4.0);
        let c = a * b + 1.0;
        assert_eq!(c.dim, 3);
        assert_eq!(c.g[1], 4.0);
        assert_eq!((1.0 / a).g[1], -0.25);
    }
}
