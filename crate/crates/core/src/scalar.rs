//! Element type abstraction.
//!
//! Matrices are stored in a generic floating-point type, but every reduction
//! (dot products, means, variances) widens to `f64` first so that thresholds
//! come out identical whether the data lives in `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// floating point: f32 or f64
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossless widening to the accumulation type.
    fn widen(self) -> f64;

    /// Round an accumulated value back into storage precision.
    fn narrow(value: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen(self) -> f64 {
        self
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value
    }
}

/// Dot product with sequential `f64` accumulation.
///
/// The summation order is fixed (left to right) so every caller that goes
/// through this function gets bit-identical results for the same inputs.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += x.widen() * y.widen();
    }
    acc
}

#[inline]
pub fn squared_norm<T: Scalar>(a: &[T]) -> f64 {
    dot(a, a)
}
