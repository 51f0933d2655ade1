//! Scalar abstraction so the math kernels run in `f32` for production and
//! `f64` for gradient checks.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline(always)]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline(always)]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn inverse_softplus<T: Real>(y: T) -> T {
    if y > T::lit(20.0) {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Converts a slice between scalar types.
pub fn cast_slice<A: Real, B: Real>(src: &[A]) -> Vec<B> {
    src.iter().map(|v| B::lit(v.as_f64())).collect()
}
