//! Dense tensors, reverse-mode differentiation and a finite-difference oracle.

mod finite_diff;
mod gradcheck;
pub mod kernels;
mod params;
mod rng;
mod tape;
mod tensor;

pub use finite_diff::{finite_diff_grad, max_relative_error};
pub use gradcheck::{check_gradients, worst, GroupError, REL_ERR_FLOOR};
pub use params::{GradSet, ParamId, ParamStore};
pub use rng::RngStream;
pub use tape::{Activation, Gradients, Mode, Tape, Var};
pub use tensor::Tensor;
