//! Permutation-adversarial learning of set functions.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod models;
pub mod perm;
pub mod scalar;
pub mod seed;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision tensor, the element type used by models and training.
pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type Var<'t> = tensor::Var<'t, f64>;
pub type Gradients = tensor::Gradients<f64>;
