use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used throughout the simulator: `f32` or `f64`.
///
/// The pieces that `num_traits::Float` does not cover (error function,
/// conversion shortcuts) live here so the numerical code can stay generic.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}

/// Standard normal CDF, computed through `erfc` so the lower tail keeps its
/// relative precision.
#[inline]
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5) * (-x / T::lit(std::f64::consts::SQRT_2)).erfc()
}

/// Standard normal density.
#[inline]
pub fn normal_pdf<T: Scalar>(x: T) -> T {
    let inv_sqrt_2pi = T::lit(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-T::lit(0.5) * x * x).exp()
}

/// Logistic CDF `1 / (1 + e^{-x})`.
#[inline]
pub fn logistic_cdf<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::lit(30.0) {
        x
    } else if x < T::lit(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], the logistic sigmoid.
#[inline]
pub fn softplus_grad<T: Scalar>(x: T) -> T {
    logistic_cdf(x)
}

/// Inverse of [`softplus`] for positive arguments.
#[inline]
pub fn softplus_inv<T: Scalar>(y: T) -> T {
    if y > T::lit(30.0) {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0f64) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!((normal_cdf(-3.0f64) - 0.001_349_898_031_630_094_6).abs() < 1e-15);
        assert!((normal_cdf(1.0f32) - 0.841_344_7).abs() < 1e-6);
    }

    #[test]
    fn softplus_roundtrip() {
        for &x in &[-5.0f64, -0.3, 0.0, 0.7, 12.0, 40.0] {
            let y = softplus(x);
            assert!((softplus_inv(y) - x).abs() < 1e-9, "x = {x}");
        }
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn logistic_is_symmetric() {
        for &x in &[0.1f64, 1.0, 5.0, 50.0] {
            assert!((logistic_cdf(x) + logistic_cdf(-x) - 1.0).abs() < 1e-15);
        }
    }
}
