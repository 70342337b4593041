//! Minimal neural-network engine: dense/conv/pool layers over a single
//! Tensor2D type, BCE loss, reverse-mode gradients, Adam, and a
//! central-difference gradient checker that every architecture must pass.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    read_checkpoint, read_checkpoint_bytes, write_checkpoint, write_checkpoint_bytes, TensorKind,
};
pub use gradcheck::{check_against_numeric, gradient_check, max_relative_error, numeric_gradients};
pub use layers::{sigmoid, Chain, ChainGrads, LayerSpec};
pub use loss::{bce_grad, bce_loss, PROB_CLAMP};
pub use tensor::Tensor2D;

/// Mini-batch SGD settings shared by every trainable model.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(crate::Error::InvalidConfig(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(crate::Error::InvalidConfig(
                "learning_rate must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}
