//! Minimal n-dimensional `f64` arrays with tape-based reverse-mode
//! differentiation.
//!
//! Storage is row-major and contiguous. The [`Graph`] records each operation
//! eagerly; [`Graph::backward`] returns gradients for every trainable leaf
//! reachable from a scalar output. [`grad_check`] compares those gradients
//! against central finite differences.
//!
//! GELU uses the tanh approximation throughout.

mod check;
mod error;
mod graph;
pub mod ops;
mod tensor;

pub use check::{grad_check, grad_check_subset, relative_error, GradCheckReport};
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use ops::{KeyMask, Reduce};
pub use tensor::Tensor;
