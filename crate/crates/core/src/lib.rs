//! Codebook-compressed Gaussian splatting trained by Metropolis-Hastings
//! sampling over split, merge and parameter-update transitions.

pub mod camera;
pub mod error;
pub mod frame;
pub mod io;
pub mod loss;
pub mod model;
pub mod render;
pub mod sampler;

pub use camera::Camera;
pub use error::{Error, Result};
pub use frame::Image;
pub use model::{Aabb, Codebook, CodebookKind, CodebookRows, ModelState};
pub use sampler::{SamplerConfig, TransitionKind, TransitionRecord, View};

/// Deterministic RNG used for every stochastic operation.
pub type ChainRng = rand_chacha::ChaCha8Rng;
