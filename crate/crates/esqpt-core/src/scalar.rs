//! Scalar abstraction over the two precision tiers.
//!
//! All construction and spectral code is generic over [`Real`] so the same
//! pipeline runs in native `f64` or in the software extended tier
//! ([`crate::dd::Dd`]). Only the former has a LAPACK fast path; the latter
//! falls back to the built-in Jacobi solver.

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Precision tier selector carried through configs, caches, and records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    /// Native IEEE double (~16 significant digits, floors near 1e-13).
    Double,
    /// Double-double arithmetic (~32 significant digits, floors near 1e-32).
    Quad,
}

impl Precision {
    /// Smallest resolvable relative gap for the tier; quantities measured
    /// against "the precision floor" use this scale.
    pub fn floor(self) -> f64 {
        match self {
            Precision::Double => 1e-13,
            Precision::Quad => 1e-32,
        }
    }

    /// Stable label used in cache keys and output metadata.
    pub fn label(self) -> &'static str {
        match self {
            Precision::Double => "double",
            Precision::Quad => "quad",
        }
    }
}

/// Real scalar with the operations the pipeline needs.
///
/// The trait is deliberately small: square roots for matrix elements and
/// rotations, sine/cosine for evolution phases, and exact conversions from
/// small integers so operator entries are constructed identically in both
/// tiers.
pub trait Real:
    Copy
    + Debug
    + Display
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    /// Unit roundoff of the representation.
    const EPSILON: Self;

    /// Number of `f64` words in the exact on-disk encoding.
    const LIMBS: usize;

    fn from_f64(x: f64) -> Self;
    fn from_usize(n: usize) -> Self;
    /// Nearest `f64`; lossy in the extended tier.
    fn to_f64(self) -> f64;
    /// Exact decomposition into at most two `f64` words (lo = 0 for `f64`).
    fn to_limbs(self) -> (f64, f64);
    /// Inverse of [`Real::to_limbs`]; exact round-trip.
    fn from_limbs(hi: f64, lo: f64) -> Self;

    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn max(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }

    fn min(self, other: Self) -> Self {
        if self < other {
            self
        } else {
            other
        }
    }

    /// `sqrt(self^2 + other^2)` without intermediate overflow concerns at
    /// the magnitudes this crate produces.
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const EPSILON: Self = f64::EPSILON;
    const LIMBS: usize = 1;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn from_usize(n: usize) -> Self {
        n as f64
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn to_limbs(self) -> (f64, f64) {
        (self, 0.0)
    }

    fn from_limbs(hi: f64, _lo: f64) -> Self {
        hi
    }

    fn abs(self) -> Self {
        f64::abs(self)
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

    fn hypot(self, other: Self) -> Self {
        f64::hypot(self, other)
    }
}
