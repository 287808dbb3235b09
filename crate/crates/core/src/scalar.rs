//! Scalar abstraction shared by the dense matrix type and everything built on it.
//!
//! Two tiers: [`Scalar`] is any exact or inexact field element (covers `f32`,
//! `f64` and `BigRational`, the latter used where label algebra must stay
//! exact), [`RealScalar`] additionally requires floating-point operations and
//! backs the autodiff/training stack.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, Num, Signed};

/// Field element usable in dense linear algebra. Division must be exact for
/// exact types (rationals) and IEEE for floats.
pub trait Scalar:
    Num + Signed + PartialOrd + FromPrimitive + Clone + Debug + Display + 'static
{
}

impl<T> Scalar for T where
    T: Num + Signed + PartialOrd + FromPrimitive + Clone + Debug + Display + 'static
{
}

/// Floating-point scalar for gradients, losses and anything needing `exp`/`sqrt`.
pub trait RealScalar: Scalar + Float + Copy {}

impl<T> RealScalar for T where T: Scalar + Float + Copy {}

/// Exact rational scalar used by the theorem oracles.
pub type Rational = num_rational::BigRational;

/// Builds a rational from an integer numerator/denominator pair.
pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(num.into(), den.into())
}

/// Nearest double to a rational.
pub fn rational_to_f64(r: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}
