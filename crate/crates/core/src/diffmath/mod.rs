//! Dense rank-2 tensors with tape-based reverse-mode differentiation,
//! including graph-creating backward passes for gradients of gradients.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_gradient, max_relative_error};
pub use ops::{Eager, Prim, TensorOps};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

