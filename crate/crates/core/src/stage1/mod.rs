//! Stage 1: learning the shared prompt context from concept targets.

mod infer;
mod loss;
mod schedule;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::encoders::{EncoderError, TokenPosition};

pub use infer::{
    encode_images, infer_concepts, read_logits, verify_checkpoint, write_logits, LogitsFile,
};
pub use loss::{bce_with_grad, concept_bce, concept_scores, score_matrix, sigmoid, BCE_EPS};
pub use schedule::{learning_rate, Schedule};
pub(crate) use train::targets_matrix;
pub use train::{context_grad_from_scores, train, Sgd, TrainOutcome, TrainState};

#[derive(Debug, Error)]
pub enum Stage1Error {
    #[error("training pool is empty")]
    EmptyTrainPool,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr:e}); images: {images}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        lr: f64,
        images: String,
    },
    #[error(
        "checkpoint was trained against bank version {checkpoint}, current bank is version {bank}"
    )]
    BankVersionMismatch { checkpoint: u64, bank: u64 },
    #[error("checkpoint label space {checkpoint} does not match current label space {current}")]
    LabelSpaceMismatch { checkpoint: String, current: String },
    #[error("checkpoint token dim {checkpoint} does not match encoder token dim {encoder}")]
    TokenDimMismatch { checkpoint: usize, encoder: usize },
    #[error("length mismatch: {0}")]
    Shape(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("logits file {path}: {message}")]
    LogitsFormat { path: String, message: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Per-image concept scores (pre-sigmoid), in label-space concept order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptLogits {
    pub image_id: String,
    pub scores: Vec<f64>,
}

impl ConceptLogits {
    pub fn probabilities(&self) -> Vec<f64> {
        self.scores.iter().map(|&s| sigmoid(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub schedule: Schedule,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub num_tokens: usize,
    pub position: TokenPosition,
    pub init_std: f64,
    /// Encode training images in train mode (augmented).
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            schedule: Schedule::Cosine,
            warmup_epochs: 5,
            epochs: 100,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 0.0,
            num_tokens: 32,
            position: TokenPosition::End,
            init_std: 0.02,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Stage1Error> {
        let bad = |msg: &str| Err(Stage1Error::Config(msg.to_string()));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.num_tokens == 0 {
            return bad("epochs, batch_size and num_tokens must be positive");
        }
        if self.warmup_epochs >= self.epochs {
            return bad("warmup_epochs must be smaller than epochs");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay non-negative");
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad("init_std must be positive");
        }
        Ok(())
    }
}
