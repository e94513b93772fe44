//! Tensor arithmetic with reverse-mode automatic differentiation.

pub mod kernels;
pub mod tape;
pub mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::{broadcast_shape, broadcast_zip, reduce_to_shape, Tensor};
