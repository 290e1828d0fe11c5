//! Tensors, reverse-mode differentiation, and the layer set used by the
//! autoencoder: dense, 1-D convolution, 1-D max-pooling, 1-D upscaling,
//! batch normalisation and elementwise activations.

mod gradcheck;
pub mod kernels;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, FiniteDiffReport};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Activation, BnMode, RunningStats, Tape, Var};
pub use tensor::Tensor;
