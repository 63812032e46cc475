//! Minimal tensor and reverse-mode differentiation engine.
//!
//! Just enough machinery for the learner: 64-bit dense tensors, a tape of
//! recorded operations with a single backward pass, affine maps, LSTM gates,
//! diagonal-Gaussian reparameterized sampling, and categorical distribution
//! utilities. No fusion, no GPU, no broadcasting beyond what the layers need.

mod init;
mod layers;
mod params;
mod tape;
mod tensor;

pub use init::{orthogonal, scaled_uniform};
pub use layers::{
    categorical_entropy, categorical_log_prob, categorical_sample, forward, kl_categorical,
    kl_diag_gaussian_vs_standard, lstm_cell, reparameterized_sample, softmax_probs,
};
pub use params::{load_checkpoint, save_checkpoint, Adam, Checkpoint, ParameterSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
