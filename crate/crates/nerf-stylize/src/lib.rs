//! Consistent 3D scene stylization: a radiance field whose color branch is
//! swapped for a latent-conditioned style module, trained jointly with a 2D
//! stylization network so each inherits the other's strength.

pub mod camera;
pub mod config;
pub mod consistency;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod latent;
pub mod nn;
pub mod pipeline;
pub mod radiance;
pub mod real;
pub mod rng;
pub mod stylized;
pub mod stylizer;

pub use error::{Error, Result};

// Training loops allocate and free large activation buffers every step;
// mimalloc keeps those in its arena instead of re-faulting fresh pages.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;
