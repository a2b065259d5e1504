//! Uncertainty-gated generative forecasting.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: tensors, seeded random streams, reverse-mode gradients and
//!   the finite-difference oracle.
//! * [`data`]: CSV ingestion, synthetic generators, rolling windows,
//!   chronological splits and standardisation.
//! * [`gate`]: uncertainty features, the gate, gated reparameterisation and
//!   the adaptive regulariser.
//! * [`attention`]: confidence-modulated attention.
//! * [`model`]: the generator (encoder, attention block, decoder, sampling)
//!   and its checkpoint format.
//! * [`training`]: the three-term objective, optimiser and epoch loop.
//! * [`wiae`]: innovation and reconstruction critics and the minimax step.
//! * [`risk`]: risk scores, threshold routing and conservative actions.
//! * [`metrics`]: point, normalised, robust and scale-free error metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod attention;
pub mod data;
pub mod error;
pub mod gate;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod risk;
pub mod training;
pub mod wiae;

pub use error::{Error, Result};
pub use numerics::{ParamStore, RngStream, Tape, Tensor, Var};
