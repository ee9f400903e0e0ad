use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point scalar the numeric kernels are written against: f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every f64 is representable (possibly rounded) in f32/f64.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
