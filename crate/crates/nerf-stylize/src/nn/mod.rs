//! Minimal neural-network building blocks: dense and convolutional layers
//! with hand-written backward passes, plus the Adam optimizer.
//!
//! Everything is generic over [`crate::real::Real`] so the same code runs in
//! `f32` for training and in `f64` for finite-difference gradient checks.

mod adam;
mod conv;
mod dense;
pub mod gradcheck;

pub use adam::Adam;
pub use conv::{AvgPool2, Conv2d, Conv2dGrad, UpsampleNearest2};
pub use dense::{
    concat_cols, matmul, matmul_into, sigmoid, softplus, Activation, Dense, DenseGrad, Mlp,
    MlpCache, MlpGrad,
};
