//! Sparse transformer path encoders for road networks: self-supervised
//! pretraining, distillation into a slim student, downstream regression and
//! an analytic cost model.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what training, checkpoints and the CLI use.

pub mod distill;
pub mod downstream;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod numerics;
pub mod profile;
pub mod rng;
pub mod ssl;

pub use error::{Error, Result};
pub use numerics::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type EncoderModel64 = encoder::EncoderModel<f64>;
pub type EncoderModel32 = encoder::EncoderModel<f32>;
pub type DualEncoder64 = ssl::DualEncoder<f64>;
pub type RelationHead64 = ssl::RelationHead<f64>;
