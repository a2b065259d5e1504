//! Tensors, seeded randomness, reverse-mode gradients and the
//! finite-difference oracle that certifies them.

pub mod autodiff;
pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod tensor;

pub use autodiff::{pearson_correlation, sigmoid, softmax_rows, Gradients, Tape, Var};
pub use gradcheck::{finite_difference_gradient, max_relative_error, relative_error};
pub use params::{ParamId, ParamStore, Parameter};
pub use rng::RngStream;
pub use tensor::Tensor;
