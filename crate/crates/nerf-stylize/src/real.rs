use ndarray::NdFloat;
use rand::distributions::uniform::SampleUniform;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Scalar type for all numerical code.
///
/// Production code instantiates `f32`; gradient-check tests instantiate `f64`
/// so central finite differences stay above rounding noise.
pub trait Real: NdFloat + SampleUniform + Default {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

/// Shorthand for converting an `f64` literal into the working scalar type.
#[inline]
pub fn rf<F: Real>(x: f64) -> F {
    F::from_f64(x)
}
