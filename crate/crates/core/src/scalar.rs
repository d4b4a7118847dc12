use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Scalar type the numeric pipeline is generic over. Everything that
/// touches relaxed codes, losses, or network parameters goes through
/// this trait; bit-level code handling stays concrete.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssign
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion for configuration constants. Panics only if the
    /// target type cannot represent any finite approximation, which no
    /// IEEE float triggers.
    fn c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite constant")
    }

    fn to_f64_c(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
