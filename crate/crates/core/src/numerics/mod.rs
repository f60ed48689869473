//! Dense `f64` tensors and a small reverse-mode differentiation tape.

mod gradcheck;
mod graph;
mod sgd;
mod tensor;

pub use gradcheck::{finite_diff_check, GradReport};
pub use graph::{Graph, Primitive, PrimitiveKind, ScalarFn, Var};
pub use sgd::sgd_step;
pub use tensor::Tensor;
