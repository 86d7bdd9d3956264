//! Scalar abstraction shared by every module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar type the numerics are generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn from_i64_lossy(n: i64) -> Self {
        Self::from_i64(n).expect("i64 representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Cx<T> = Complex<T>;

#[inline]
pub fn cx<T: Real>(re: T, im: T) -> Cx<T> {
    Complex::new(re, im)
}

#[inline]
pub fn czero<T: Real>() -> Cx<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
pub fn cone<T: Real>() -> Cx<T> {
    Complex::new(T::one(), T::zero())
}

#[inline]
pub fn creal<T: Real>(x: T) -> Cx<T> {
    Complex::new(x, T::zero())
}

/// e^{iθ}
#[inline]
pub fn cis<T: Real>(theta: T) -> Cx<T> {
    Complex::new(theta.cos(), theta.sin())
}

/// Chordal distance |z − w| on the circle.
#[inline]
pub fn chordal<T: Real>(z: Cx<T>, w: Cx<T>) -> T {
    (z - w).norm()
}

/// Argument mapped into [0, 2π).
pub fn phase_of<T: Real>(z: Cx<T>) -> T {
    let two_pi = T::PI() + T::PI();
    let mut t = z.im.atan2(z.re);
    if t < T::zero() {
        t += two_pi;
    }
    if t >= two_pi {
        t -= two_pi;
    }
    t
}

/// Wraps an angle difference into (−π, π].
pub fn wrap_angle<T: Real>(t: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = t % two_pi;
    if r > T::PI() {
        r -= two_pi;
    } else if r <= -T::PI() {
        r += two_pi;
    }
    r
}

/// Dense 2×2 complex matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2<T: Real> {
    pub m: [[Cx<T>; 2]; 2],
}

impl<T: Real> Mat2<T> {
    pub fn new(a: Cx<T>, b: Cx<T>, c: Cx<T>, d: Cx<T>) -> Self {
        Self {
            m: [[a, b], [c, d]],
        }
    }

    pub fn identity() -> Self {
        Self::new(cone(), czero(), czero(), cone())
    }

    pub fn diag(a: T, d: T) -> Self {
        Self::new(creal(a), czero(), czero(), creal(d))
    }

    pub fn det(&self) -> Cx<T> {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn trace(&self) -> Cx<T> {
        self.m[0][0] + self.m[1][1]
    }

    pub fn max_abs(&self) -> T {
        let mut r = T::zero();
        for row in &self.m {
            for e in row {
                r = r.max(e.norm());
            }
        }
        r
    }

    pub fn frobenius(&self) -> T {
        let mut s = T::zero();
        for row in &self.m {
            for e in row {
                s += e.norm_sqr();
            }
        }
        s.sqrt()
    }

    /// Spectral norm: σ_max² = (F² + √(F⁴ − 4|det|²)) / 2.
    pub fn norm(&self) -> T {
        let scale = self.max_abs();
        if scale == T::zero() {
            return T::zero();
        }
        let s = self.scale(T::one() / scale);
        let f2 = s.m.iter().flatten().map(|e| e.norm_sqr()).sum::<T>();
        let d = s.det().norm();
        let disc = (f2 * f2 - T::c(4.0) * d * d).max(T::zero());
        scale * ((f2 + disc.sqrt()) / T::c(2.0)).sqrt()
    }

    pub fn scale(&self, s: T) -> Self {
        let mut r = *self;
        for row in r.m.iter_mut() {
            for e in row.iter_mut() {
                *e = *e * s;
            }
        }
        r
    }

    pub fn scale_cx(&self, s: Cx<T>) -> Self {
        let mut r = *self;
        for row in r.m.iter_mut() {
            for e in row.iter_mut() {
                *e *= s;
            }
        }
        r
    }

    pub fn adjoint(&self) -> Self {
        Self::new(
            self.m[0][0].conj(),
            self.m[1][0].conj(),
            self.m[0][1].conj(),
            self.m[1][1].conj(),
        )
    }

    pub fn apply(&self, v: [Cx<T>; 2]) -> [Cx<T>; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    pub fn max_diff(&self, other: &Self) -> T {
        let mut r = T::zero();
        for i in 0..2 {
            for j in 0..2 {
                r = r.max((self.m[i][j] - other.m[i][j]).norm());
            }
        }
        r
    }
}

impl<T: Real> std::ops::Mul for Mat2<T> {
    type Output = Mat2<T>;
    fn mul(self, o: Mat2<T>) -> Mat2<T> {
        let a = &self.m;
        let b = &o.m;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = Mat2::<f64>::diag(3.0, -0.5);
        assert!((m.norm() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        let m = Mat2::new(cx(1.0, 2.0), cx(-0.3, 0.1), cx(0.7, -1.1), cx(0.2, 0.0));
        let h = m.adjoint() * m;
        let mut v = [cone::<f64>(), cx(0.3, 0.2)];
        for _ in 0..200 {
            let w = h.apply(v);
            let n = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
            v = [w[0] / n, w[1] / n];
        }
        let w = m.apply(v);
        let sigma = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
        assert!((m.norm() - sigma).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5f64) + 0.5).abs() < 1e-15);
        assert!(phase_of(cx(1.0f64, -1e-300)) < 2.0 * std::f64::consts::PI);
    }
}
