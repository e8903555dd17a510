//! Scalar abstraction for the numeric code.
//!
//! Everything downstream is written against [`Real`] so the same kernels run
//! in `f32` or `f64`. Counts and episode indices stay integral; only
//! likelihoods, probabilities, and coefficients go through this trait.

use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used throughout the crate.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Debug
    + Display
    + 'static
{
    /// Converts from `f64`, panicking only for values no float type carries.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 value representable in scalar type")
    }

    /// Converts a count. Counts in this crate stay far below 2^53.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Widens to `f64`, for rendering. Every `Real` value widens losslessly.
    fn widen(self) -> f64 {
        self.to_f64().expect("scalar widens to f64")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum<T>
        + Debug
        + Display
        + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_generic<R: Real>(values: &[f64]) -> R {
        values.iter().map(|&v| R::of(v)).sum()
    }

    #[test]
    fn trait_covers_both_widths() {
        let xs = [0.5, 0.25, 1.0];
        assert_eq!(sum_generic::<f64>(&xs), 1.75);
        assert_eq!(sum_generic::<f32>(&xs), 1.75f32);
        assert_eq!(f64::of_usize(132), 132.0);
    }
}
