//! Scalar abstraction for the numeric core.
//!
//! All tensor math is generic over [`Scalar`], implemented for `f32` and
//! `f64`. The crate root exports `f64`-concrete aliases, which the training
//! pipeline uses throughout; `f32` is available for forward-only work where
//! loose tolerances are acceptable.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point scalar usable in tensors, tapes, and optimizers.
pub trait Scalar: Float + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static {
    /// Conversion from `f64`, used at RNG and serialization boundaries.
    /// Exact for `f64`; rounds to nearest for `f32`.
    fn from_f64(x: f64) -> Self;

    /// Widening conversion to `f64` (exact for both implementors).
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
