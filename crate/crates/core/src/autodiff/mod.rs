//! Dense reverse-mode differentiation over a small, fixed operation set.
//!
//! A [`Graph`] records each operation together with its forward value.
//! [`Graph::backward`] walks the record in reverse from a scalar loss and
//! returns the gradient of every grad-requiring leaf. Graphs are
//! single-writer; independent graphs can be built on separate threads.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_coords, gradcheck_directions};
pub use graph::{Gradients, Graph, OpKind, Precision, Var};
pub use tensor::Tensor;

pub(crate) use graph::{matmul_kernel, sigmoid, softplus};

#[cfg(test)]
mod tests;
