//! A laboratory for meta-learned representations that keep old skills
//! intact while new ones are trained in sequence.
//!
//! The crate is built on a small reverse-mode autodiff tape ([`graph`])
//! that can differentiate its own gradients, which makes the unrolled
//! inner-loop training of [`metatrain`] an ordinary differentiable
//! program. Problem generators live in [`problems`], continual-learning
//! evaluation in [`eval`], interference mitigations in [`retention`],
//! and representation statistics in [`analysis`].

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod metatrain;
pub mod network;
pub mod optim;
pub mod problems;
pub mod retention;
pub mod rngutil;
pub mod tensor;

pub use error::{ConfigError, DataError, EvalError, GraphError, TrainError};
pub use graph::{backward, finite_diff_gradient, mse, softmax_cross_entropy, Graph, GradientMap, Value};
pub use tensor::Tensor;
