//! Contrastive pretraining, adaptation and representation analysis for raw
//! multi-antenna IQ streams.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the double-precision default used by the CLI.

pub mod adapt;
pub mod analysis;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod numerics;
pub mod scalar;
pub mod signal;
pub mod ssl;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Floor applied to vector norms before dividing by them.
pub const NORM_EPS: f64 = 1e-12;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Encoder64 = encoder::Encoder<f64>;
pub type Encoder32 = encoder::Encoder<f32>;
pub type IqTensor64 = signal::IqTensor<f64>;
