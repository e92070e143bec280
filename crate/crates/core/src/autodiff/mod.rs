//! Reverse-mode automatic differentiation over small dense `f64` tensors.
//!
//! A [`Graph`] records every primitive application in creation order.
//! [`Graph::backward`] walks that record in reverse from a single-element
//! node and returns a [`Gradients`] map covering every node; nodes that do
//! not influence the root read back as exact zeros.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{check_primitive, finite_diff_check, primitive_suite, GradCheck};
pub use graph::{Gradients, Graph, Primitive, Var, MASK_FILL};
pub use tensor::Tensor;
