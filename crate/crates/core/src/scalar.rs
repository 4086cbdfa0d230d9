//! Scalar abstraction so the numeric kernels work in either precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar used throughout the numeric kernels.
///
/// Implemented for `f32` and `f64`. The crate-root aliases fix `f64` as the
/// working precision; `f32` stays available for memory-bound experiments.
pub trait Real: Float + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` constant, panicking if the target type cannot hold it.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("constant not representable in scalar type")
    }

    /// Widens to `f64` for reporting and serialization.
    fn to_double(self) -> f64;
}

impl Real for f32 {
    fn to_double(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn to_double(self) -> f64 {
        self
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
