use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating point scalar used by the numerical core: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant. Never fails for the supported widths.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }

    /// `true` when the value is finite and inside `[0, 1]`.
    #[inline]
    fn is_unit(self) -> bool {
        self.is_finite() && self >= Self::zero() && self <= Self::one()
    }
}

impl Real for f32 {}
impl Real for f64 {}
