//! Scalar abstraction for the numeric core.
//!
//! Everything downstream of the combinatorics is written against [`Real`] so
//! the same code runs at f32 and f64. Literals enter through [`rf`], which
//! keeps call sites free of `from_f64(..).unwrap()` noise.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the numeric core.
///
/// `nalgebra::RealField` supplies field ops and trig; the num-traits bounds
/// supply lossless-enough conversion from literals and indices.
pub trait Real: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default {}

impl<T> Real for T where T: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default {}

/// Converts an f64 literal into the working scalar.
#[inline]
pub fn rf<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// Converts a working scalar to f64 for logging and serialization.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}
