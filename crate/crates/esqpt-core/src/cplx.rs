//! Minimal complex scalar over either precision tier.
//!
//! Only the dynamics layer needs complex numbers (evolution phases and
//! quench amplitudes), and it needs them generically over [`Real`], so a
//! small local type is used instead of tying the tier choice to an
//! external complex implementation.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cplx<S> {
    pub re: S,
    pub im: S,
}

impl<S: Real> Cplx<S> {
    pub const fn new(re: S, im: S) -> Self {
        Cplx { re, im }
    }

    pub fn zero() -> Self {
        Cplx::new(S::ZERO, S::ZERO)
    }

    pub fn from_real(re: S) -> Self {
        Cplx::new(re, S::ZERO)
    }

    /// `e^{i theta}`.
    pub fn cis(theta: S) -> Self {
        Cplx::new(theta.cos(), theta.sin())
    }

    pub fn conj(self) -> Self {
        Cplx::new(self.re, -self.im)
    }

    pub fn abs2(self) -> S {
        self.re * self.re + self.im * self.im
    }

    pub fn abs(self) -> S {
        self.re.hypot(self.im)
    }

    pub fn scale(self, s: S) -> Self {
        Cplx::new(self.re * s, self.im * s)
    }
}

impl<S: Real> Add for Cplx<S> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Cplx::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl<S: Real> Sub for Cplx<S> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Cplx::new(self.re - rhs.re, self.im - rhs.im)
    }
}

impl<S: Real> Mul for Cplx<S> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Cplx::new(
            self.re * rhs.re - self.im * rhs.im,
            self.re * rhs.im + self.im * rhs.re,
        )
    }
}

impl<S: Real> Neg for Cplx<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Cplx::new(-self.re, -self.im)
    }
}

impl<S: Real> AddAssign for Cplx<S> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_phases_compose() {
        let a = Cplx::<f64>::cis(0.7);
        let b = Cplx::<f64>::cis(-1.9);
        let ab = a * b;
        let direct = Cplx::<f64>::cis(0.7 - 1.9);
        assert!((ab - direct).abs() < 1e-15);
        assert!((a.abs2() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conjugation_flips_phase() {
        let a = Cplx::<f64>::cis(0.3);
        let p = a * a.conj();
        assert!((p.re - 1.0).abs() < 1e-15 && p.im.abs() < 1e-16);
    }
}
