//! A small differentiable-network core: dense layers, a gated recurrent
//! cell, softmax, losses, SGD/Adam and a checkpoint format.
//!
//! Parameters live in one flat `f64` array ([`ParameterVector`]); layers read
//! their slice of it and write gradients into a same-shaped buffer.

mod checkpoint;
mod layers;
mod loss;
mod network;
mod optim;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Activation, Dense, DenseCache, GruCell, GruStepCache};
pub use loss::{cross_entropy, mse, softmax_backward, softmax_cross_entropy};
pub use network::{ForwardCache, Gradients, LayerSpec, Network, NetworkSpec};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParameterVector, Segment};

use alloc::string::String;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("cache does not belong to these parameters")]
    StaleCache,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_uniform<R: Rng + ?Sized>(values: &mut [f64], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / crate::math::sqrt(fan_in.max(1) as f64);
    for v in values {
        *v = rng.random_range(-bound..=bound);
    }
}

pub(crate) fn check_finite(values: &[f64], what: &'static str) -> Result<(), NnError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite(what))
    }
}
