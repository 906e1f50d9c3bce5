//! Reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! Values live in [`Tensor`]; computation is recorded on a [`Tape`] whose
//! methods build the graph and return [`Var`] handles. Gradients of
//! parameters flow into a [`ParamStore`](crate::params::ParamStore) via
//! [`Tape::backward_into`], and accumulate across backward calls.

pub mod check;
mod conv;
mod elementwise;
pub(crate) mod linalg;
mod norm;
mod softmax;
mod tape;
mod tensor;
mod tokens;

pub use check::{finite_difference_check, GradCheck};
pub use conv::Conv2dGeometry;
pub use norm::BnStats;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
