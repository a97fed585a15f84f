use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used by similarity scoring, text-overlap metrics and the
/// bootstrap. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize is representable as a float")
    }

    fn from_f64_lossy(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn two() -> Self {
        Self::one() + Self::one()
    }

    fn three() -> Self {
        Self::two() + Self::one()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// An exact ratio of two counts. Rates computed from confusion tallies are
/// kept in this form and only converted to a float at the edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct Rate {
    pub num: usize,
    pub den: usize,
}

impl Rate {
    pub fn new(num: usize, den: usize) -> Self {
        debug_assert!(num <= den, "rate numerator exceeds denominator");
        Self { num, den }
    }

    /// `None` when the denominator is zero.
    pub fn value<T: Scalar>(&self) -> Option<T> {
        if self.den == 0 {
            None
        } else {
            Some(T::from_count(self.num) / T::from_count(self.den))
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        self.value::<f64>()
    }
}
