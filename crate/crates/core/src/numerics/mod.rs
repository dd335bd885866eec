//! Tensors, reverse-mode differentiation, and optimization.

mod autodiff;
pub mod gradcheck;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use autodiff::{ExprGraph, Gradients, Var, BCE_CLAMP};
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use params::{Binding, GradSet, ParamId, ParameterSet};
pub use scalar::Scalar;
pub use tensor::Tensor;
