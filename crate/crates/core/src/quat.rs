use crate::jet::Scalar;
use std::ops::{Add, Mul, Neg, Sub};

/// Quaternion `w + x i + y j + z k` over any scalar type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat<S> {
    pub w: S,
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Quat<S> {
    pub fn new(w: S, x: S, y: S, z: S) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_slice(s: &[S]) -> Self {
        Quat::new(s[0], s[1], s[2], s[3])
    }

    pub fn to_array(self) -> [S; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn real(w: f64) -> Self {
        Quat::new(S::cst(w), S::zero(), S::zero(), S::zero())
    }

    /// Unit imaginary `1, i, j, k` for `k = 0..4`.
    pub fn basis(k: usize) -> Self {
        let mut a = [S::zero(); 4];
        a[k] = S::one();
        Quat::from_slice(&a)
    }

    pub fn conj(self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn norm2(self) -> S {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn dot(self, o: Self) -> S {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn scale(self, s: S) -> Self {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }
}

impl<S: Scalar> Add for Quat<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<S: Scalar> Sub for Quat<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Quat::new(self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<S: Scalar> Neg for Quat<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl<S: Scalar> Mul for Quat<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamilton_relations() {
        let i = Quat::<f64>::basis(1);
        let j = Quat::<f64>::basis(2);
        let k = Quat::<f64>::basis(3);
        assert_eq!(i * j, k);
        assert_eq!(j * k, i);
        assert_eq!(k * i, j);
        assert_eq!(i * i, Quat::real(-1.0));
        assert_eq!(i * j * k, Quat::real(-1.0));
    }

    #[test]
    fn norm_is_multiplicative() {
        let a = Quat::new(0.3, -1.2, 0.5, 2.0);
        let b = Quat::new(-0.7, 0.1, 1.5, -0.4);
        assert!(((a * b).norm2() - a.norm2() * b.norm2()).abs() < 1e-12);
        assert!(((a * b).conj() - b.conj() * a.conj()).norm2() < 1e-24);
    }
}
