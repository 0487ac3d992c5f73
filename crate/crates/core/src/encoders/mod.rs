//! Frozen encoder interface, prompt assembly and the mock encoder pair.
//!
//! An [`EncoderBundle`] groups an image encoder `f`, a text encoder `g` and
//! the tokenizer with its frozen token-embedding table. The only trainable
//! state anywhere in Stage 1 is the [`PromptContext`]; encoders take `&self`
//! and never see it mutably.

mod checkpoint;
mod mock;
mod preprocess;
mod prompt;

use std::any::Any;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Fingerprinter;
use crate::rng::SeededRng;

pub use checkpoint::{
    read_context_checkpoint, write_context_checkpoint, ContextCheckpoint, ContextHeader,
};
pub use mock::{mock_bundle, MockConfig};
pub use preprocess::{Preprocessor, CLIP_INPUT_SIZE};
pub use prompt::{assemble_prompt, context_positions, PromptContext, TokenPosition};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("prompt of length {len} exceeds the text encoder's maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("concept token list is empty")]
    EmptyConcept,
    #[error("cannot tokenize concept `{concept}`: {reason}")]
    Tokenize { concept: String, reason: String },
    #[error("cannot encode image `{image}`: {reason}")]
    Image { image: String, reason: String },
    #[error("encoder `{0}` is not available in this build (only `mock` ships)")]
    Unavailable(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodeMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Array1<f64>,
    pub normalized: bool,
}

impl FeatureVector {
    pub fn normalized(mut values: Array1<f64>) -> Self {
        let norm = values.dot(&values).sqrt();
        if norm > 0.0 {
            values /= norm;
        }
        Self {
            values,
            normalized: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Forward result of the text encoder, kept for the backward pass.
pub struct TextActivation {
    /// L2-normalised text feature.
    pub feature: Array1<f64>,
    pub cache: Box<dyn Any + Send + Sync>,
}

pub trait TextEncoder: Send + Sync {
    fn output_dim(&self) -> usize;
    fn token_dim(&self) -> usize;
    fn max_len(&self) -> usize;
    /// Encodes an embedded token sequence (`len x token_dim`).
    fn forward(&self, sequence: ArrayView2<f64>) -> Result<TextActivation, EncoderError>;
    /// Gradient of a scalar loss w.r.t. the input sequence, given its gradient
    /// w.r.t. the normalised feature.
    fn backward(&self, activation: &TextActivation, grad_feature: ArrayView1<f64>) -> Array2<f64>;
    fn fingerprint(&self, fp: &mut Fingerprinter);
}

pub trait ImageEncoder: Send + Sync {
    fn output_dim(&self) -> usize;
    /// `rng` supplies augmentation randomness in train mode.
    fn encode(
        &self,
        image_ref: &str,
        mode: EncodeMode,
        rng: &mut SeededRng,
    ) -> Result<FeatureVector, EncoderError>;
    /// Whether train-mode features differ from eval-mode ones.
    fn augments(&self) -> bool;
    fn fingerprint(&self, fp: &mut Fingerprinter);
}

/// Text -> token ids -> frozen embeddings.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Result<Vec<u32>, EncoderError>;
    fn embed(&self, ids: &[u32]) -> Array2<f64>;
    fn vocab_size(&self) -> usize;
    fn fingerprint(&self, fp: &mut Fingerprinter);
}

pub struct EncoderBundle {
    pub name: String,
    pub image: Box<dyn ImageEncoder>,
    pub text: Arc<dyn TextEncoder>,
    pub tokenizer: Arc<dyn Tokenizer>,
    /// Fixed multiplier on cosine similarity; never trained.
    pub logit_scale: f64,
}

impl std::fmt::Debug for EncoderBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncoderBundle")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("token_dim", &self.token_dim())
            .field("logit_scale", &self.logit_scale)
            .finish()
    }
}

impl EncoderBundle {
    pub fn dim(&self) -> usize {
        self.text.output_dim()
    }

    pub fn token_dim(&self) -> usize {
        self.text.token_dim()
    }

    pub fn max_len(&self) -> usize {
        self.text.max_len()
    }

    /// Digest over every frozen parameter of the bundle.
    pub fn fingerprint(&self) -> String {
        let mut fp = Fingerprinter::new();
        fp.str(&self.name).f64s([self.logit_scale].iter());
        self.text.fingerprint(&mut fp);
        self.image.fingerprint(&mut fp);
        self.tokenizer.fingerprint(&mut fp);
        fp.finish()
    }

    /// Frozen token embeddings of a concept string (`tokens x token_dim`).
    pub fn embed_concept(&self, concept: &str) -> Result<Array2<f64>, EncoderError> {
        let ids = self.tokenizer.tokenize(concept)?;
        if ids.is_empty() {
            return Err(EncoderError::Tokenize {
                concept: concept.to_string(),
                reason: "no tokens".into(),
            });
        }
        Ok(self.tokenizer.embed(&ids))
    }

    pub fn encode_image(
        &self,
        image_ref: &str,
        mode: EncodeMode,
        rng: &mut SeededRng,
    ) -> Result<FeatureVector, EncoderError> {
        self.image.encode(image_ref, mode, rng)
    }
}

/// Loads a bundle by name. Only `mock` is built in; pretrained identifiers
/// (e.g. `ViT-B/16`) need an external adapter.
pub fn load_bundle(name: &str, config: &MockConfig) -> Result<EncoderBundle, EncoderError> {
    match name {
        "mock" => mock_bundle(config),
        other => Err(EncoderError::Unavailable(other.to_string())),
    }
}

/// Frozen token embeddings for every concept, in label-space order.
#[derive(Debug, Clone)]
pub struct ConceptTokens {
    pub embeddings: Vec<Array2<f64>>,
}

impl ConceptTokens {
    pub fn new(bundle: &EncoderBundle, concepts: &[String]) -> Result<Self, EncoderError> {
        let embeddings = concepts
            .iter()
            .map(|c| bundle.embed_concept(c))
            .collect::<Result<_, _>>()?;
        Ok(Self { embeddings })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Text features of every concept under the current context, with the
/// activations needed to back-propagate into the context.
pub struct ConceptFeatures {
    /// `E x D`, rows L2-normalised.
    pub features: Array2<f64>,
    activations: Vec<TextActivation>,
}

pub fn encode_concepts(
    bundle: &EncoderBundle,
    context: &PromptContext,
    tokens: &ConceptTokens,
) -> Result<ConceptFeatures, EncoderError> {
    if context.token_dim() != bundle.token_dim() {
        return Err(EncoderError::Shape(format!(
            "context token dim {} != encoder token dim {}",
            context.token_dim(),
            bundle.token_dim()
        )));
    }
    let mut features = Array2::zeros((tokens.len(), bundle.dim()));
    let mut activations = Vec::with_capacity(tokens.len());
    for (j, concept) in tokens.embeddings.iter().enumerate() {
        let sequence = assemble_prompt(context, concept.view(), bundle.max_len())?;
        let act = bundle.text.forward(sequence.view())?;
        features.row_mut(j).assign(&act.feature);
        activations.push(act);
    }
    Ok(ConceptFeatures {
        features,
        activations,
    })
}

impl ConceptFeatures {
    /// Gradient w.r.t. the context vectors given the gradient w.r.t. every
    /// concept feature row (`E x D`).
    pub fn context_gradient(
        &self,
        bundle: &EncoderBundle,
        context: &PromptContext,
        tokens: &ConceptTokens,
        grad_features: ArrayView2<f64>,
    ) -> Array2<f64> {
        let mut grad = Array2::zeros(context.vectors.raw_dim());
        for (j, act) in self.activations.iter().enumerate() {
            let g = grad_features.row(j);
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let seq_grad = bundle.text.backward(act, g);
            let positions = context_positions(
                context.position,
                context.len(),
                tokens.embeddings[j].nrows(),
            );
            for (m, &p) in positions.iter().enumerate() {
                let mut row = grad.row_mut(m);
                row += &seq_grad.row(p);
            }
        }
        grad
    }
}

/// Stacks feature vectors into an `N x D` matrix.
pub fn stack_features(features: &[FeatureVector]) -> Array2<f64> {
    let views: Vec<ArrayView1<f64>> = features.iter().map(|f| f.values.view()).collect();
    if views.is_empty() {
        return Array2::zeros((0, 0));
    }
    ndarray::stack(Axis(0), &views).expect("equal feature dims")
}
