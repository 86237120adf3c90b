//! Scalar abstraction shared by every numeric module.
//!
//! All linear algebra is written against [`Scalar`], which is implemented for
//! `f32` and `f64`. Root-level type aliases pin the common `f64` instantiation.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type usable by the covariance engine: `f32` or `f64`.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Error function.
    fn erf(self) -> Self;
    /// Complementary error function.
    fn erfc(self) -> Self;
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Lossy conversion back to `f64`, used for reporting and CSV emission.
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle<T: Scalar>(angle: T) -> T {
    let two_pi = T::two_pi();
    let pi = T::pi();
    let mut a = angle % two_pi;
    if a > pi {
        a -= two_pi;
    } else if a <= -pi {
        a += two_pi;
    }
    a
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    // erfc keeps precision in the lower tail.
    lit::<T>(0.5) * (-x / T::sqrt(lit(2.0))).erfc()
}
