//! Floating-point scalar abstraction.
//!
//! Every solver in this crate is written against [`Scalar`] so the same code
//! runs at `f32` or `f64`.  The bound is deliberately thin: `num_traits::Float`
//! plus primitive conversions and the assign operators the inner loops use.

use std::fmt::{Debug, Display, LowerExp};
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into the working scalar type.
///
/// Tolerances and algorithm constants are written as `f64` literals and
/// converted at use; the conversion is infallible for finite literals.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite literal converts to scalar")
}

/// Maximum norm of a slice.
pub fn sup_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// Maximum absolute difference between two equally long slices.
pub fn sup_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

/// Sum of a slice by pairwise reduction.
///
/// Pairwise summation keeps the rounding error growth logarithmic in the
/// length, which is what lets aggregated Monte Carlo statistics stay
/// reproducible to well below 1e-12 relative error.
pub fn pairwise_sum<T: Scalar>(v: &[T]) -> T {
    match v.len() {
        0 => T::zero(),
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let (lo, hi) = v.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_conversion_round_trips_both_widths() {
        let a: f64 = lit(0.125);
        let b: f32 = lit(0.125);
        assert_eq!(a, 0.125f64);
        assert_eq!(b, 0.125f32);
    }

    #[test]
    fn pairwise_sum_matches_sequential_on_small_inputs() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64 / 7.0).collect();
        let seq: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - seq).abs() < 1e-12);
    }

    #[test]
    fn sup_dist_picks_the_worst_entry() {
        let a = [1.0f64, 2.0, 3.0];
        let b = [1.0f64, 2.5, 3.1];
        assert_eq!(sup_dist(&a, &b), 0.5);
    }
}
