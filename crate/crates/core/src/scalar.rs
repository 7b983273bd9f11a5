use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of embedding vectors.
///
/// Arithmetic that affects ranking (norms, dot products) is carried out in
/// `f64` regardless of the storage type.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    fn widen(self) -> f64;
    fn narrow(v: f64) -> Self;
    fn to_f32_storage(self) -> f32;
    fn from_f32_storage(v: f32) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
    #[inline]
    fn narrow(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f32_storage(self) -> f32 {
        self
    }
    #[inline]
    fn from_f32_storage(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen(self) -> f64 {
        self
    }
    #[inline]
    fn narrow(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f32_storage(self) -> f32 {
        self as f32
    }
    #[inline]
    fn from_f32_storage(v: f32) -> Self {
        v as f64
    }
}
