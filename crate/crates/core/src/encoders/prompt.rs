//! Learnable context vectors and `[w_1] ... [w_M] [CONCEPT]` assembly.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;

use super::EncoderError;

/// Where the concept tokens sit relative to the context vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenPosition {
    Start,
    /// After the first `ceil(M/2)` context vectors.
    Middle,
    #[default]
    End,
}

impl TokenPosition {
    pub const ALL: [TokenPosition; 3] = [
        TokenPosition::Start,
        TokenPosition::Middle,
        TokenPosition::End,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenPosition::Start => "START",
            TokenPosition::Middle => "MIDDLE",
            TokenPosition::End => "END",
        }
    }

    /// Number of context vectors placed before the concept tokens.
    pub fn context_before(self, m: usize) -> usize {
        match self {
            TokenPosition::Start => 0,
            TokenPosition::Middle => m.div_ceil(2),
            TokenPosition::End => m,
        }
    }
}

impl fmt::Display for TokenPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenPosition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "start" => Ok(TokenPosition::Start),
            "middle" => Ok(TokenPosition::Middle),
            "end" => Ok(TokenPosition::End),
            other => Err(format!(
                "unknown token position `{other}` (start|middle|end)"
            )),
        }
    }
}

/// `M x D_tok` context vectors shared by every concept prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub vectors: Array2<f64>,
    pub position: TokenPosition,
}

impl PromptContext {
    /// Zero-mean Gaussian initialisation with standard deviation `std`.
    pub fn random(
        m: usize,
        token_dim: usize,
        position: TokenPosition,
        std: f64,
        rng: &mut SeededRng,
    ) -> Self {
        assert!(m >= 1, "at least one context vector is required");
        let vectors = Array2::from_shape_simple_fn((m, token_dim), || std * rng.normal());
        Self { vectors, position }
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn token_dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Sequence positions of `w_1..w_M` for a prompt with `n_concept` concept tokens.
pub fn context_positions(position: TokenPosition, m: usize, n_concept: usize) -> Vec<usize> {
    let before = position.context_before(m);
    (0..m)
        .map(|i| if i < before { i } else { i + n_concept })
        .collect()
}

/// Builds the embedded prompt. Fails instead of truncating when the result
/// would exceed `max_len`.
pub fn assemble_prompt(
    context: &PromptContext,
    concept_tokens: ArrayView2<f64>,
    max_len: usize,
) -> Result<Array2<f64>, EncoderError> {
    let n_concept = concept_tokens.nrows();
    if n_concept == 0 {
        return Err(EncoderError::EmptyConcept);
    }
    if concept_tokens.ncols() != context.token_dim() {
        return Err(EncoderError::Shape(format!(
            "concept token dim {} != context dim {}",
            concept_tokens.ncols(),
            context.token_dim()
        )));
    }
    let m = context.len();
    let len = m + n_concept;
    if len > max_len {
        return Err(EncoderError::SequenceTooLong { len, max: max_len });
    }
    let before = context.position.context_before(m);
    let mut seq = Array2::zeros((len, context.token_dim()));
    seq.slice_mut(s![..before, ..])
        .assign(&context.vectors.slice(s![..before, ..]));
    seq.slice_mut(s![before..before + n_concept, ..])
        .assign(&concept_tokens);
    seq.slice_mut(s![before + n_concept.., ..])
        .assign(&context.vectors.slice(s![before.., ..]));
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    /// Context row i holds the value i+1, concept row k holds -(k+1).
    fn labelled(m: usize, n: usize, position: TokenPosition) -> (PromptContext, Array2<f64>) {
        let ctx = PromptContext {
            vectors: Array2::from_shape_fn((m, 2), |(i, _)| (i + 1) as f64),
            position,
        };
        let concept = Array2::from_shape_fn((n, 2), |(k, _)| -((k + 1) as f64));
        (ctx, concept)
    }

    fn column(seq: &Array2<f64>) -> Vec<f64> {
        seq.column(0).to_vec()
    }

    #[test]
    fn end_policy() {
        let (ctx, c) = labelled(4, 2, TokenPosition::End);
        let seq = assemble_prompt(&ctx, c.view(), 77).unwrap();
        assert_eq!(column(&seq), vec![1.0, 2.0, 3.0, 4.0, -1.0, -2.0]);
    }

    #[test]
    fn middle_policy() {
        let (ctx, c) = labelled(4, 1, TokenPosition::Middle);
        let seq = assemble_prompt(&ctx, c.view(), 77).unwrap();
        assert_eq!(column(&seq), vec![1.0, 2.0, -1.0, 3.0, 4.0]);
        let (ctx, c) = labelled(5, 1, TokenPosition::Middle);
        let seq = assemble_prompt(&ctx, c.view(), 77).unwrap();
        assert_eq!(column(&seq), vec![1.0, 2.0, 3.0, -1.0, 4.0, 5.0]);
    }

    #[test]
    fn single_token_start_is_reversed_end() {
        let (ctx_s, c) = labelled(1, 1, TokenPosition::Start);
        let (ctx_e, _) = labelled(1, 1, TokenPosition::End);
        let start = column(&assemble_prompt(&ctx_s, c.view(), 77).unwrap());
        let mut end = column(&assemble_prompt(&ctx_e, c.view(), 77).unwrap());
        end.reverse();
        assert_eq!(start, end);
    }

    #[test]
    fn errors() {
        let (ctx, c) = labelled(4, 2, TokenPosition::End);
        assert!(matches!(
            assemble_prompt(&ctx, c.view(), 5),
            Err(EncoderError::SequenceTooLong { len: 6, max: 5 })
        ));
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            assemble_prompt(&ctx, empty.view(), 77),
            Err(EncoderError::EmptyConcept)
        ));
    }

    proptest! {
        #[test]
        fn assembly_arithmetic(m in 1usize..=64, n in 1usize..=8, p in 0usize..3) {
            let position = TokenPosition::ALL[p];
            let (ctx, c) = labelled(m, n, position);
            let seq = assemble_prompt(&ctx, c.view(), 128).unwrap();
            prop_assert_eq!(seq.nrows(), m + n);
            let col = column(&seq);
            let before = match position {
                TokenPosition::Start => 0,
                TokenPosition::Middle => m - m / 2,
                TokenPosition::End => m,
            };
            // concept tokens are contiguous, in order, right after `before` context vectors
            for k in 0..n {
                prop_assert_eq!(col[before + k], -((k + 1) as f64));
            }
            // context vectors keep their order and land where context_positions says
            let positions = context_positions(position, m, n);
            prop_assert_eq!(positions.len(), m);
            for (i, &pos) in positions.iter().enumerate() {
                prop_assert_eq!(col[pos], (i + 1) as f64);
            }
        }
    }
}
