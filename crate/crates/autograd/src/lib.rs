//! Tape-based reverse-mode differentiation over channel-major `f64` tensors.
//!
//! Tensors carry no batch axis: images are `(C, H, W)`, vectors `(N)`.
//! Build a [`Tape`] per forward pass, bind parameters with
//! [`ParamStore::bind`], then call [`Tape::backward`] on a scalar.

pub mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::Adam;
pub use params::{Bound, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
