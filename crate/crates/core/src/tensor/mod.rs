//! Dense `f64` tensors and the reverse-mode differentiation they run on.

mod dense;
mod gradcheck;
mod graph;

pub use dense::Tensor;
pub use gradcheck::{grad_check, grad_check_many, grad_check_many_with, GradCheckReport};
pub use graph::{Graph, Var, OP_NAMES};
