//! Scalar abstraction for the numeric kernel.
//!
//! Everything numeric in this crate is generic over [`Scalar`], which is any
//! IEEE float with the usual transcendental functions (`f32`, `f64`).
//! Concrete aliases for the common types live at the crate root.

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, Signed, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::{Product, Sum};
use std::ops::{AddAssign, DivAssign, MulAssign, RemAssign, SubAssign};

pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Signed
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + RemAssign
    + Sum
    + Product
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from a literal. Panics only if the target type cannot
    /// represent any finite value, which does not happen for real floats.
    fn from_f(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal must convert")
    }

    fn to_f(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + Signed
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + RemAssign
        + Sum
        + Product
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

/// Complex value over the crate scalar.
pub type CNum<T> = Complex<T>;

/// Real constant lifted to a complex value.
pub fn cre<T: Scalar>(re: T) -> CNum<T> {
    Complex::new(re, T::zero())
}
