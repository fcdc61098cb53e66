//! Scalar-generic tensors with tape-based reverse-mode differentiation.
//!
//! The engine is deliberately small: NHWC convolutions and their transposes,
//! GDN/IGDN and layer normalization, dense layers, a handful of activations,
//! and an [`optim::Adam`] optimizer. Domain-specific differentiable operations
//! (channel models, image-quality losses) are registered from outside through
//! [`Graph::push_op`].

#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{BackwardArgs, Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
