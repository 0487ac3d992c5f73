//! Concept-guided prompt tuning for interpretable few-shot and zero-shot
//! disease classification.
//!
//! The pipeline has two trainable stages sitting on top of a frozen
//! vision-language encoder pair:
//!
//! 1. [`stage1`] tunes a small block of shared context vectors so that the
//!    similarity between an image and each `[context] [CONCEPT]` prompt
//!    predicts whether that concept is visible in the image.
//! 2. [`stage2`] maps the resulting concept logits to disease categories with
//!    inspectable classifiers (logistic regression, linear SVM, random forest)
//!    or an MLP baseline.
//!
//! Around those sit the [`concept_bank`] tooling that builds the concept
//! vocabulary from language-model generations, the [`data`] layer (manifests,
//! few-shot episodes, base/novel splits, synthetic datasets), the evaluation
//! protocols in [`eval`], and the concept-contribution reports in
//! [`interpret`].

pub mod concept_bank;
pub mod config;
pub mod data;
pub mod digest;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod interpret;
pub mod pipeline;
pub mod rng;
pub mod stage1;
pub mod stage2;

pub use error::{Error, Result};
