//! Scalar abstraction over the floating point types the engine runs in.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point scalar the tensor engine is generic over: f32 or f64.
pub trait Scalar:
    num_traits::Float + Debug + Display + Sum + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
