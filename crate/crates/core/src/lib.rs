//! Dense token-level reward shaping for reinforcement-learning text style
//! transfer: corpora, small attention models, style attribution, per-token
//! rewards, sampling, training and evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used for training and for verification.

pub mod attribution;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod neural;
pub mod rewards;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training precision.
pub type Model32 = neural::Model<f32>;
/// Verification precision (gradient checks, exact oracles).
pub type Model64 = neural::Model<f64>;
