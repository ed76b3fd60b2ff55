//! Reverse-mode differentiation over dense tensors.
//!
//! Graphs are built fresh for every loss evaluation; a graph never crosses
//! threads, but independent graphs can be built concurrently.

mod graph;
mod kernels;
mod tensor;

pub use graph::{softplus_inverse, Graph, LinearOperator, NodeId, LEAKY_RELU_SLOPE};
pub use tensor::Tensor;

pub(crate) use graph::softplus;
