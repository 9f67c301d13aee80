//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Model math is written once against [`Scalar`] and instantiated for `f32`
//! (the training/inference default) and `f64` (used by oracles and
//! high-precision checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every `f64` is representable (possibly
    /// rounded) in both instantiations, so this never fails.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal fits in scalar")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::lit(v as f64)
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f32` slice into the target scalar type.
pub fn cast_slice<S: Scalar>(src: &[f32]) -> Vec<S> {
    src.iter().map(|&v| S::lit(v as f64)).collect()
}
