//! Numeric traits shared by the crate.
//!
//! Learning code (tensors, the risk model, losses) is generic over [`Scalar`],
//! a real floating-point type. Code whose correctness is checked by exact
//! comparison (route costs, precision/recall, time-to-accident) is generic
//! over [`Field`], which also admits exact rationals such as
//! `num_rational::Ratio<i64>`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, NumAssign, ToPrimitive};

/// Floating-point element type for tensors: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant, panicking only for types that cannot hold it.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Ordered field used where results must be reproducible exactly.
///
/// Implemented for every `Num + PartialOrd + FromPrimitive` copy type, so
/// `f64` and `Ratio<i64>` both qualify.
pub trait Field: Num + Copy + PartialOrd + FromPrimitive + Debug {
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in field")
    }
}

impl<T: Num + Copy + PartialOrd + FromPrimitive + Debug> Field for T {}
