//! Discriminator-cooperated feature-map distillation for compressing
//! image-to-image GANs, with a small reverse-mode differentiation engine,
//! synthetic datasets, collaborative three-player training, and desk-scale
//! evaluation.

pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
