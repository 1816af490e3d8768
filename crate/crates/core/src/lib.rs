//! Meta-learned no-reference image quality regression.
//!
//! The crate is generic over the floating-point scalar `S` (f32 for
//! training, f64 where tolerances demand it); `Tensor32`-style aliases
//! cover the common case.

pub mod error;
pub mod scalar;
pub mod seeds;
pub mod tensor;
pub mod kernels;
pub mod graph;
pub mod gradcheck;
pub mod optim;
pub mod model;
pub mod data;
pub mod meta;
pub mod eval;
pub mod taskgen;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type Graph64 = graph::Graph<f64>;
pub type ParamSet32 = model::ParamSet<f32>;
pub type ParamSet64 = model::ParamSet<f64>;
