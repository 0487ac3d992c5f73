//! Eval-mode concept inference, checkpoint compatibility checks and the
//! logits file consumed by Stage 2.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::data::{ImageSample, LabelSpace};
use crate::encoders::{
    encode_concepts, ConceptTokens, ContextHeader, EncodeMode, EncoderBundle, PromptContext,
};
use crate::rng::SeededRng;

use super::{score_matrix, ConceptLogits, Stage1Error};

const LOGITS_MAGIC: &str = "# cgp-logits v1";

/// Image features (`N x D`) in sample order. Each image gets its own RNG
/// stream so the result does not depend on order.
pub fn encode_images(
    bundle: &EncoderBundle,
    samples: &[ImageSample],
    mode: EncodeMode,
    seed: u64,
) -> Result<Array2<f64>, Stage1Error> {
    let mut out = Array2::zeros((samples.len(), bundle.dim()));
    for (i, s) in samples.iter().enumerate() {
        let mut rng = SeededRng::for_label(seed, &s.image_id);
        let f = bundle.encode_image(&s.image_ref, mode, &mut rng)?;
        out.row_mut(i).assign(&f.values);
    }
    Ok(out)
}

/// Concept logits for every sample. Scores are rounded to f32 so in-memory
/// results equal what a logits file round-trips to.
pub fn infer_concepts(
    bundle: &EncoderBundle,
    context: &PromptContext,
    space: &LabelSpace,
    samples: &[ImageSample],
) -> Result<Vec<ConceptLogits>, Stage1Error> {
    let tokens = ConceptTokens::new(bundle, &space.concept_ids)?;
    let concepts = encode_concepts(bundle, context, &tokens)?;
    let images = encode_images(bundle, samples, EncodeMode::Eval, 0)?;
    let scores = score_matrix(bundle.logit_scale, images.view(), concepts.features.view());
    Ok(samples
        .iter()
        .zip(scores.rows())
        .map(|(s, row)| ConceptLogits {
            image_id: s.image_id.clone(),
            scores: row.iter().map(|&v| f64::from(v as f32)).collect(),
        })
        .collect())
}

/// Refuses checkpoints trained against a different bank version, label space
/// or token width.
pub fn verify_checkpoint(
    header: &ContextHeader,
    bank_version: u64,
    space: &LabelSpace,
    bundle: &EncoderBundle,
) -> Result<(), Stage1Error> {
    if header.bank_version != bank_version {
        return Err(Stage1Error::BankVersionMismatch {
            checkpoint: header.bank_version,
            bank: bank_version,
        });
    }
    let current = space.digest();
    if header.label_space != current {
        return Err(Stage1Error::LabelSpaceMismatch {
            checkpoint: header.label_space.clone(),
            current,
        });
    }
    if header.token_dim != bundle.token_dim() {
        return Err(Stage1Error::TokenDimMismatch {
            checkpoint: header.token_dim,
            encoder: bundle.token_dim(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitsFile {
    pub bank_version: u64,
    pub label_space: String,
    pub concept_ids: Vec<String>,
    pub rows: Vec<ConceptLogits>,
}

impl LogitsFile {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{LOGITS_MAGIC}").unwrap();
        writeln!(out, "# bank_version={}", self.bank_version).unwrap();
        writeln!(out, "# label_space={}", self.label_space).unwrap();
        writeln!(out, "# E={}", self.concept_ids.len()).unwrap();
        out.push_str("image_id");
        for c in &self.concept_ids {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.image_id);
            for &s in &row.scores {
                write!(out, "\t{}", s as f32).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, Stage1Error> {
        let err = |message: String| Stage1Error::LogitsFormat {
            path: origin.to_string(),
            message,
        };
        let mut lines = text.lines();
        if lines.next() != Some(LOGITS_MAGIC) {
            return Err(err("missing logits header".into()));
        }
        let mut field = |name: &str| -> Result<String, Stage1Error> {
            let line = lines
                .next()
                .ok_or_else(|| err(format!("missing `{name}` header")))?;
            line.strip_prefix("# ")
                .and_then(|l| l.strip_prefix(name))
                .and_then(|l| l.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| err(format!("expected `# {name}=...`, found `{line}`")))
        };
        let bank_version = field("bank_version")?
            .parse()
            .map_err(|e| err(format!("bank_version: {e}")))?;
        let label_space = field("label_space")?;
        let e: usize = field("E")?.parse().map_err(|e| err(format!("E: {e}")))?;
        let header = lines
            .next()
            .ok_or_else(|| err("missing column header".into()))?;
        let columns: Vec<&str> = header.split('\t').collect();
        if columns.first() != Some(&"image_id") || columns.len() != e + 1 {
            return Err(err(format!(
                "column header must list image_id and {e} concepts"
            )));
        }
        let concept_ids = columns[1..].iter().map(|c| c.to_string()).collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let image_id = parts.next().unwrap_or_default().to_string();
            let scores = parts
                .map(|v| v.parse::<f32>().map(f64::from))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(format!("row {}: {e}", n + 1)))?;
            if scores.len() != e {
                return Err(err(format!(
                    "row {} has {} scores, expected {e}",
                    n + 1,
                    scores.len()
                )));
            }
            rows.push(ConceptLogits { image_id, scores });
        }
        Ok(Self {
            bank_version,
            label_space,
            concept_ids,
            rows,
        })
    }
}

pub fn write_logits(path: &Path, file: &LogitsFile) -> Result<(), Stage1Error> {
    std::fs::write(path, file.to_text()).map_err(|e| Stage1Error::LogitsFormat {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_logits(path: &Path) -> Result<LogitsFile, Stage1Error> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Stage1Error::LogitsFormat {
        path: origin.clone(),
        message: e.to_string(),
    })?;
    LogitsFile::parse(&text, &origin)
}
