//! Prompt-context checkpoint: a magic line, a one-line JSON header, then the
//! `M x D_tok` matrix as little-endian f32 in row-major order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EncoderError, PromptContext, TokenPosition};

const MAGIC: &str = "CGP-CONTEXT v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextHeader {
    pub num_tokens: usize,
    pub token_dim: usize,
    pub position: TokenPosition,
    pub bank_version: u64,
    pub label_space: String,
    pub encoder: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextCheckpoint {
    pub header: ContextHeader,
    pub context: PromptContext,
}

pub fn write_context_checkpoint(
    path: &Path,
    context: &PromptContext,
    bank_version: u64,
    label_space: &str,
    encoder: &str,
) -> Result<(), EncoderError> {
    let header = ContextHeader {
        num_tokens: context.len(),
        token_dim: context.token_dim(),
        position: context.position,
        bank_version,
        label_space: label_space.to_string(),
        encoder: encoder.to_string(),
    };
    let mut buf = Vec::with_capacity(64 + 4 * context.vectors.len());
    writeln!(buf, "{MAGIC}").expect("vec write");
    serde_json::to_writer(&mut buf, &header)
        .map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    buf.push(b'\n');
    for v in context.vectors.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, buf)
        .map_err(|e| EncoderError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn read_context_checkpoint(path: &Path) -> Result<ContextCheckpoint, EncoderError> {
    let err = |msg: String| EncoderError::Checkpoint(format!("{}: {msg}", path.display()));
    let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader
        .read_line(&mut line)
        .map_err(|e| err(e.to_string()))?;
    if line.trim_end() != MAGIC {
        return Err(err("not a context checkpoint".into()));
    }
    line.clear();
    reader
        .read_line(&mut line)
        .map_err(|e| err(e.to_string()))?;
    let header: ContextHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| err(format!("header: {e}")))?;
    let mut body = Vec::new();
    reader
        .read_to_end(&mut body)
        .map_err(|e| err(e.to_string()))?;
    let n = header.num_tokens * header.token_dim;
    if header.num_tokens == 0 || body.len() != 4 * n {
        return Err(err(format!(
            "expected {} bytes of weights for {}x{}, found {}",
            4 * n,
            header.num_tokens,
            header.token_dim,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let vectors = Array2::from_shape_vec((header.num_tokens, header.token_dim), values)
        .map_err(|e| err(e.to_string()))?;
    Ok(ContextCheckpoint {
        context: PromptContext {
            vectors,
            position: header.position,
        },
        header,
    })
}
