//! Minimal differentiable computation engine.
//!
//! Values are row-major `f64` matrices ([`Tensor`]). A [`Tape`] records
//! operations on them and produces reverse-mode gradients; trainable
//! parameters live in a [`ParamStore`] and are updated by [`Adam`].

mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, Probe};
pub use layers::{recurrent_scan, Activation, Dense, LstmCell, LstmState, Mlp};
pub use optim::Adam;
pub use params::{ParamCheckpoint, ParamEntry, ParamId, ParamStore};
pub use tape::{sigmoid, softplus, CustomOp, Gradients, Tape, Unary, Var};
pub use tensor::Tensor;
