//! Double-double arithmetic: the software extended precision tier.
//!
//! A value is an unevaluated sum `hi + lo` of two `f64` with
//! `|lo| <= ulp(hi)/2`, giving ~106 mantissa bits (about 32 significant
//! digits). The error-free transformations are the classic Dekker/Knuth
//! ones; no FMA is assumed, so products use the 26-bit split and results
//! are bit-reproducible across targets.
//!
//! The operation set is exactly what the spectral pipeline needs: field
//! ops, `sqrt` for matrix elements and Givens rotations, and `sin`/`cos`
//! with two-step argument reduction for evolution phases. Phase arguments
//! as large as 1e9 keep ~23 correct digits after reduction, still far
//! beyond the `f64` floor.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::scalar::Real;

/// Double-double number (`hi + lo`, normalized).
#[derive(Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

/// `a + b` with exact error term; no magnitude precondition.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// `a + b` with exact error term, assuming `|a| >= |b|`.
#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// Dekker split of a `f64` into two 26-bit halves.
#[inline]
fn split(a: f64) -> (f64, f64) {
    let t = 134_217_729.0 * a; // 2^27 + 1
    let hi = t - (t - a);
    (hi, a - hi)
}

/// `a * b` with exact error term.
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ahi, alo) = split(a);
    let (bhi, blo) = split(b);
    (p, ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    pub const PI: Dd = Dd {
        hi: std::f64::consts::PI,
        lo: 1.2246467991473532e-16,
    };
    pub const TWO_PI: Dd = Dd {
        hi: std::f64::consts::TAU,
        lo: 2.4492935982947064e-16,
    };
    pub const FRAC_PI_2: Dd = Dd {
        hi: std::f64::consts::FRAC_PI_2,
        lo: 6.123233995736766e-17,
    };

    #[inline]
    pub fn new(hi: f64, lo: f64) -> Dd {
        let (s, e) = quick_two_sum(hi, lo);
        Dd { hi: s, lo: e }
    }

    #[inline]
    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    #[inline]
    fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        Dd::new(p, e + self.lo * b)
    }

    pub fn sqrt(self) -> Dd {
        if self.hi == 0.0 && self.lo == 0.0 {
            return Dd::ZERO;
        }
        debug_assert!(self.hi > 0.0, "sqrt of negative double-double");
        // One Newton step in double-double on top of the f64 estimate
        // doubles the correct digits, which already saturates the format.
        let x = 1.0 / self.hi.sqrt();
        let ax = self.hi * x;
        let axdd = Dd::from_f64(ax);
        let err = self - axdd * axdd;
        Dd::new(ax, err.hi * (x * 0.5))
    }

    /// Taylor sine on `[-pi/4, pi/4]`.
    fn sin_taylor(r: Dd) -> Dd {
        if r.hi == 0.0 {
            return Dd::ZERO;
        }
        let r2 = r * r;
        let mut term = r;
        let mut sum = r;
        let mut k = 1usize;
        loop {
            term *= r2;
            term /= Dd::from_f64(-((2 * k) as f64 * (2 * k + 1) as f64));
            sum += term;
            k += 1;
            if term.hi.abs() < 1e-35 || k > 24 {
                break;
            }
        }
        sum
    }

    /// Taylor cosine on `[-pi/4, pi/4]`.
    fn cos_taylor(r: Dd) -> Dd {
        let r2 = r * r;
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        let mut k = 1usize;
        loop {
            term *= r2;
            term /= Dd::from_f64(-((2 * k - 1) as f64 * (2 * k) as f64));
            sum += term;
            k += 1;
            if term.hi.abs() < 1e-35 || k > 24 {
                break;
            }
        }
        sum
    }

    /// Reduce to `r + j*(pi/2)` with `r` in `[-pi/4, pi/4]`, `j in -2..=2`.
    fn reduce(self) -> (Dd, i32) {
        let k = (self / Dd::TWO_PI).hi.round();
        let x = self - Dd::TWO_PI.mul_f64(k);
        let j = (x / Dd::FRAC_PI_2).hi.round();
        let r = x - Dd::FRAC_PI_2.mul_f64(j);
        (r, j as i32)
    }

    pub fn sin(self) -> Dd {
        let (r, j) = self.reduce();
        match j {
            0 => Dd::sin_taylor(r),
            1 => Dd::cos_taylor(r),
            -1 => -Dd::cos_taylor(r),
            _ => -Dd::sin_taylor(r),
        }
    }

    pub fn cos(self) -> Dd {
        let (r, j) = self.reduce();
        match j {
            0 => Dd::cos_taylor(r),
            1 => -Dd::sin_taylor(r),
            -1 => Dd::sin_taylor(r),
            _ => -Dd::cos_taylor(r),
        }
    }

    /// Decimal scientific form with `sig` significant digits (truncated,
    /// deterministic). Used for extended-tier data output where `f64`
    /// formatting would discard half the mantissa.
    pub fn format_sci(self, sig: usize) -> String {
        if self.hi == 0.0 {
            return String::from("0.0e0");
        }
        let neg = self.hi < 0.0;
        let mut x = self.abs();
        let mut e10 = x.hi.abs().log10().floor() as i32;
        // normalize into [1, 10)
        let ten = Dd::from_f64(10.0);
        let mut scale = Dd::ONE;
        for _ in 0..e10.abs() {
            scale *= ten;
        }
        if e10 >= 0 {
            x /= scale;
        } else {
            x *= scale;
        }
        if x.hi >= 10.0 {
            x /= ten;
            e10 += 1;
        } else if x.hi < 1.0 {
            x *= ten;
            e10 -= 1;
        }
        let mut digits = String::with_capacity(sig + 8);
        if neg {
            digits.push('-');
        }
        for i in 0..sig {
            let mut d = x.hi.floor();
            let mut frac = x - Dd::from_f64(d);
            if frac.hi < 0.0 {
                d -= 1.0;
                frac += Dd::ONE;
            } else if d > 9.0 {
                d = 9.0;
                frac = Dd::ZERO;
            }
            digits.push((b'0' + d as u8) as char);
            if i == 0 {
                digits.push('.');
            }
            x = frac * ten;
        }
        digits.push('e');
        digits.push_str(&e10.to_string());
        digits
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, rhs: Dd) -> Dd {
        let (s, se) = two_sum(self.hi, rhs.hi);
        let (t, te) = two_sum(self.lo, rhs.lo);
        let (s1, s2) = quick_two_sum(s, se + t);
        let (hi, lo) = quick_two_sum(s1, s2 + te);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, rhs: Dd) -> Dd {
        self + (-rhs)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, rhs: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, rhs.hi);
        Dd::new(p, e + self.hi * rhs.lo + self.lo * rhs.hi)
    }
}

impl Div for Dd {
    type Output = Dd;
    #[inline]
    fn div(self, rhs: Dd) -> Dd {
        let q1 = self.hi / rhs.hi;
        let mut r = self - rhs.mul_f64(q1);
        let q2 = r.hi / rhs.hi;
        r -= rhs.mul_f64(q2);
        let q3 = r.hi / rhs.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Dd::new(s, e + q3)
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, rhs: Dd) {
        *self = *self + rhs;
    }
}

impl SubAssign for Dd {
    fn sub_assign(&mut self, rhs: Dd) {
        *self = *self - rhs;
    }
}

impl MulAssign for Dd {
    fn mul_assign(&mut self, rhs: Dd) {
        *self = *self * rhs;
    }
}

impl DivAssign for Dd {
    fn div_assign(&mut self, rhs: Dd) {
        *self = *self / rhs;
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Dd) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            ord => ord,
        }
    }
}

impl fmt::Debug for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dd({:e} + {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.format_sci(32))
    }
}

impl Real for Dd {
    const ZERO: Self = Dd::ZERO;
    const ONE: Self = Dd::ONE;
    // 2^-104
    const EPSILON: Self = Dd {
        hi: 4.930380657631324e-32,
        lo: 0.0,
    };
    const LIMBS: usize = 2;

    fn from_f64(x: f64) -> Self {
        Dd::from_f64(x)
    }

    fn from_usize(n: usize) -> Self {
        debug_assert!(n < (1usize << 53));
        Dd::from_f64(n as f64)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn to_limbs(self) -> (f64, f64) {
        (self.hi, self.lo)
    }

    fn from_limbs(hi: f64, lo: f64) -> Self {
        Dd { hi, lo }
    }

    fn abs(self) -> Self {
        Dd::abs(self)
    }

    fn sqrt(self) -> Self {
        Dd::sqrt(self)
    }

    fn sin(self) -> Self {
        Dd::sin(self)
    }

    fn cos(self) -> Self {
        Dd::cos(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(x: f64) -> Dd {
        Dd::from_f64(x)
    }

    #[test]
    fn field_ops_carry_extra_digits() {
        // (1 + 1e-20) - 1 is unrepresentable in f64 but exact here
        let a = Dd::ONE + dd(1e-20);
        let d = a - Dd::ONE;
        assert_eq!(d.hi, 1e-20);
        assert_eq!(d.lo, 0.0);
    }

    #[test]
    fn sqrt_two_squares_back() {
        let r = dd(2.0).sqrt();
        let err = (r * r - dd(2.0)).abs();
        assert!(err.hi < 1e-31, "err = {:?}", err);
    }

    #[test]
    fn division_inverts_multiplication() {
        let a = dd(3.0).sqrt();
        let b = dd(7.0) / dd(11.0);
        let q = (a * b) / b;
        assert!((q - a).abs().hi < 1e-30);
    }

    #[test]
    fn trig_identity_small_and_large_arguments() {
        for &x in &[0.0, 0.3, 1.0, 2.5, -4.0, 1e3, 123456.789, -9.87e8] {
            let v = dd(x);
            let (s, c) = (v.sin(), v.cos());
            let one = s * s + c * c;
            let err = (one - Dd::ONE).abs().hi;
            // reduction of huge arguments costs ~|x| * eps absolute
            let tol = 1e-30_f64.max(3.0 * x.abs() * 4.9e-32);
            assert!(err < tol, "x={x}: 1-s^2-c^2 = {err:e}");
        }
    }

    #[test]
    fn trig_matches_f64_at_moderate_precision() {
        for &x in &[0.1, 0.9, 3.0, -7.3, 40.0] {
            assert!((dd(x).sin().to_f64() - x.sin()).abs() < 1e-15);
            assert!((dd(x).cos().to_f64() - x.cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn full_turn_is_identity() {
        let x = Dd::TWO_PI * dd(1e6);
        assert!((x.cos() - Dd::ONE).abs().hi < 1e-24);
        assert!(x.sin().abs().hi < 1e-24);
    }

    #[test]
    fn ordering_uses_both_limbs() {
        let a = Dd::new(1.0, 1e-20);
        let b = Dd::new(1.0, -1e-20);
        assert!(b < a);
        assert!(a > Dd::ONE && b < Dd::ONE);
    }

    #[test]
    fn scientific_formatting_round_trips_leading_digits() {
        // divide by a power of two so the scaling is exact and the
        // repeating decimal digits of 1/3 survive well past f64 range
        let x = Dd::ONE / dd(3.0) / dd(4096.0);
        let s = x.format_sci(30);
        // 1/12288 = 8.138020833...e-5 with repeating 3s
        assert!(s.starts_with("8.1380208333333333333333333333"), "{s}");
        assert!(s.ends_with("e-5"), "{s}");
        assert_eq!(dd(0.0).format_sci(10), "0.0e0");
    }
}
