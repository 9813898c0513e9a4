//! Scalar abstractions shared by every solver.
//!
//! Two tiers are used throughout the crate:
//!
//! * [`Field`] — an ordered field with cheap copies. Enough for backward
//!   induction on a Markov chain, projections onto obstacles and the
//!   Dynkin-game recursions. Implemented for `f32`, `f64` and the exact
//!   rational [`Exact`].
//! * [`Real`] — a [`Field`] that is also a floating point type, required
//!   wherever logarithms, exponentials or square roots appear.

use std::fmt::{Debug, Display};
use std::ops::Neg;

use num_rational::Ratio;
use num_traits::{Float, FloatConst, FromPrimitive, Num, ToPrimitive};

/// Exact rational arithmetic, used by the enumeration oracles.
pub type Exact = Ratio<i128>;

/// Ordered field with value semantics.
pub trait Field:
    Copy
    + Num
    + PartialOrd
    + Neg<Output = Self>
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// `|self|`.
    #[inline]
    fn magnitude(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }

    #[inline]
    fn larger(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    #[inline]
    fn smaller(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    /// Positive part `max(self, 0)`.
    #[inline]
    fn positive_part(self) -> Self {
        self.larger(Self::zero())
    }

    /// Negative part `max(-self, 0)`.
    #[inline]
    fn negative_part(self) -> Self {
        (-self).larger(Self::zero())
    }

    /// Projection onto `[lo, hi]`. Requires `lo <= hi`.
    #[inline]
    fn clamp_to(self, lo: Self, hi: Self) -> Self {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }

    /// Lossy conversion used for reporting.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Converts an `f64` literal. Panics if the target cannot represent it.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable in scalar type")
    }

    /// `num / den` built from integers, exact for rational scalars.
    #[inline]
    fn ratio(num: i64, den: i64) -> Self {
        Self::from_i64(num).expect("integer not representable")
            / Self::from_i64(den).expect("integer not representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable")
    }

    fn is_finite_value(self) -> bool;
}

/// Floating point scalar.
pub trait Real: Field + Float + FloatConst {}

impl Field for f32 {
    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}
impl Field for f64 {
    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}
impl Field for Exact {
    #[inline]
    fn is_finite_value(self) -> bool {
        true
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Formats a value with 17 significant digits, the precision used by every
/// CSV artifact.
pub fn fmt17<S: Field>(v: S) -> String {
    format!("{:.16e}", v.as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_and_parts() {
        assert_eq!(2.5_f64.clamp_to(0.0, 1.0), 1.0);
        assert_eq!((-2.5_f64).clamp_to(0.0, 1.0), 0.0);
        assert_eq!((-3.0_f64).negative_part(), 3.0);
        assert_eq!(3.0_f64.negative_part(), 0.0);
        let half = Exact::ratio(1, 2);
        assert_eq!(half.clamp_to(Exact::ratio(3, 4), Exact::from_count(1)), Exact::ratio(3, 4));
        assert_eq!((-half).magnitude(), half);
    }

    #[test]
    fn rational_literal_is_exact_for_dyadics() {
        assert_eq!(Exact::lit(0.375), Exact::ratio(3, 8));
    }

    #[test]
    fn fmt17_round_trips() {
        let v = std::f64::consts::PI / 7.0;
        let s = fmt17(v);
        assert_eq!(s.parse::<f64>().unwrap(), v);
    }
}
