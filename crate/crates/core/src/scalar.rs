//! Floating-point scalar abstraction.
//!
//! Numerics needing transcendental functions or random draws are written
//! against [`Scalar`], implemented for `f32` and `f64`. Formulas built from
//! field operations alone only require [`Arith`], which exact rationals
//! such as `num_rational::Ratio<i64>` also satisfy.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, Num, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;

/// Ordered field element with conversions; enough for the closed-form
/// probability formulas.
pub trait Arith: Num + PartialOrd + Copy + FromPrimitive + ToPrimitive + Debug {}

impl<T: Num + PartialOrd + Copy + FromPrimitive + ToPrimitive + Debug> Arith for T {}

/// Real scalar: f32 or f64.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    /// One draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Scalar")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("every Scalar converts to f64")
    }

    /// Slack used when deciding whether a matrix is positive semidefinite.
    fn psd_tolerance() -> Self {
        Self::of(1e-9).max(Self::epsilon() * Self::of(64.0))
    }
}

impl Scalar for f32 {
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for f64 {
    fn erfc(self) -> Self {
        libm::erfc(self)
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

/// Clamps a computed probability to `[0, 1]`. NaN passes through.
pub fn clamp_probability<T: Arith>(p: T) -> T {
    if p < T::zero() {
        T::zero()
    } else if p > T::one() {
        T::one()
    } else {
        p
    }
}
