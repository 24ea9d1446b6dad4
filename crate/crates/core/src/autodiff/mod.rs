//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! All values are `f64`. Broadcasting is limited to a scalar operand or a
//! `1×D` row against a `B×D` batch; per-row scaling goes through
//! [`Graph::mul_col`] explicitly.

mod graph;
pub(crate) mod kernels;
mod tensor;

pub use graph::{sigmoid, Gradients, Graph, Var};
pub use tensor::{zero_grads, Tensor, TensorId};
