//! Small dense matrices over any [`Scalar`].

use crate::jet::{Differentiable, Scalar};
use nalgebra::DMatrix;
use std::ops::{Index, IndexMut};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_cols(cols: &[Vec<S>]) -> Self {
        let rows = cols.first().map_or(0, |c| c.len());
        Self::from_fn(rows, cols.len(), |i, j| cols[j][i])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, o: &Mat<S>) -> Self {
        assert_eq!(self.cols, o.rows, "shape mismatch");
        let mut out = Self::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..o.cols {
                    out[(i, j)] += a * o[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut s = S::zero();
                for (j, vj) in v.iter().enumerate() {
                    s += self[(i, j)] * *vj;
                }
                s
            })
            .collect()
    }

    pub fn add(&self, o: &Mat<S>) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] + o[(i, j)])
    }

    pub fn sub(&self, o: &Mat<S>) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] - o[(i, j)])
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| x * s)
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> Mat<T> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| f(*x)).collect() }
    }

    pub fn values(&self) -> Mat<f64> {
        self.map(|x| x.value())
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Mat<S>) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Gauss-Jordan inverse with partial pivoting on the values.
    pub fn inverse(&self) -> Option<Self> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.data.iter().fold(0.0f64, |m, x| m.max(x.value().abs()));
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| a[(x, c)].value().abs().total_cmp(&a[(y, c)].value().abs()))?;
            if a[(p, c)].value().abs() <= 1e-14 * scale.max(1e-300) {
                return None;
            }
            if p != c {
                for j in 0..n {
                    a.data.swap(p * n + j, c * n + j);
                    inv.data.swap(p * n + j, c * n + j);
                }
            }
            let r = a[(c, c)].recip();
            for j in 0..n {
                a[(c, j)] *= r;
                inv[(c, j)] *= r;
            }
            for i in 0..n {
                if i == c {
                    continue;
                }
                let f = a[(i, c)];
                for j in 0..n {
                    let acj = a[(c, j)];
                    let icj = inv[(c, j)];
                    a[(i, j)] -= f * acj;
                    inv[(i, j)] -= f * icj;
                }
            }
        }
        Some(inv)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.value().abs()))
    }
}

impl<S: Differentiable> Mat<S> {
    pub fn lower(&self) -> Mat<S::Lower> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x.lower()).collect() }
    }

    pub fn partial(&self, k: usize) -> Mat<S::Lower> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x.partial(k)).collect() }
    }
}

impl Mat<f64> {
    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    pub fn is_positive_definite(&self) -> bool {
        let sym = Mat::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]));
        nalgebra::Cholesky::new(sym.to_dmatrix()).is_some()
    }

    pub fn asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.rows {
            for j in 0..self.cols {
                m = m.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        m
    }

    pub fn lift<S: Scalar>(&self) -> Mat<S> {
        self.map(S::cst)
    }
}

impl<S> Index<(usize, usize)> for Mat<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Mat<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut s = S::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Jet2;

    #[test]
    fn inverse_roundtrip() {
        let a = Mat::from_fn(4, 4, |i, j| if i == j { 3.0 } else { 1.0 / (1.0 + i as f64 + 2.0 * j as f64) });
        let inv = a.inverse().unwrap();
        let id = a.matmul(&inv);
        assert!(id.sub(&Mat::identity(4)).max_abs() < 1e-14);
    }

    #[test]
    fn singular_detected() {
        let a = Mat::from_fn(3, 3, |i, j| (i + j) as f64);
        assert!(a.inverse().is_none());
    }

    #[test]
    fn jet_inverse_derivative() {
        // d(A^{-1}) = -A^{-1} dA A^{-1} with A(x) = [[2+x, 1],[1, 3]]
        let x = Jet2::seed(0.0, 0, 1);
        let a = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => x + 2.0,
            (1, 1) => Jet2::cst(3.0),
            _ => Jet2::cst(1.0),
        });
        let inv = a.inverse().unwrap();
        let a0 = a.values().inverse().unwrap();
        let da = Mat::from_fn(2, 2, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        let expect = a0.matmul(&da).matmul(&a0).scale(-1.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((inv[(i, j)].g[0] - expect[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cholesky_check() {
        assert!(Mat::<f64>::identity(3).is_positive_definite());
        let mut m = Mat::<f64>::identity(2);
        m[(0, 1)] = 2.0;
        m[(1, 0)] = 2.0;
        assert!(!m.is_positive_definite());
    }
}
