//! Minimal neural substrate: dense layers, an LSTM cell, losses, Adam, and a
//! finite-difference gradient checker.
//!
//! Everything is double precision. Forward passes return caches consumed by
//! the matching backward passes; training mutates parameters only through
//! [`AdamState::step`]. The only architectures built on top of this are the
//! per-table autoencoder and the encoder-decoder sequence model, so there is
//! no general autodiff graph here.

mod adam;
mod check;
mod dense;
mod loss;
mod lstm;
mod params;

pub use adam::{AdamParams, AdamState};
pub use check::max_rel_grad_error;
pub use dense::{DenseCache, DenseGrads, DenseLayer};
pub use loss::{bce_batch, binary_cross_entropy, mean_squared_error, mse_flat, BCE_EPS};
pub use lstm::{LstmCell, LstmGrads, LstmStepCache};
pub use params::{read_tensors, read_tensors_from, write_tensors, write_tensors_to, NamedTensor};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Element-wise activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative at pre-activation `z` with output `y` already computed.
    #[inline]
    pub fn derivative(&self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Uniform init in ±sqrt(6 / (fan_in + fan_out)).
pub(crate) fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> f64 {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.gen_range(-bound..bound)
}
