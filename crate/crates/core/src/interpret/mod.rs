//! Per-disease concept contribution reports and Sankey flow exports.
//!
//! A concept's contribution to disease `d` is the mean, over the test images
//! carrying `d`, of `weight[d, j] * x_j`, where `x` is the Stage 2 input row
//! (concept score, or its sigmoid when the model was fitted on probabilities).

mod sankey;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ImageSample;
use crate::stage1::ConceptLogits;
use crate::stage2::{concept_weights, design_matrix, InputKind, Stage2Error, Stage2Model};

pub use sankey::{export_sankey, SankeyFlow, SankeyLink, SankeyNode};

/// Recorded in every report so readers know how widths were derived.
pub const ATTRIBUTION: &str = "weight_x_input";

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error(transparent)]
    Unsupported(#[from] Stage2Error),
    #[error("disease {0:?} is not in the model's label space")]
    UnknownDisease(String),
    #[error("no logits rows for images labelled {0:?}")]
    NoSamples(String),
    #[error("logits row {image_id} has {found} scores, model expects {expected}")]
    Shape {
        image_id: String,
        found: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Positive contributions divided by their sum; negatives stay raw.
    #[default]
    Sum,
    /// `(raw - min) / (max - min)` over all concepts.
    MinMax,
    None,
}

impl std::str::FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Normalization::Sum),
            "minmax" | "min-max" | "min_max" => Ok(Normalization::MinMax),
            "none" | "raw" => Ok(Normalization::None),
            other => Err(format!(
                "unknown normalization {other:?} (sum | minmax | none)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionEntry {
    pub concept_id: String,
    pub contribution: f64,
    pub raw: f64,
    /// 1-based, in descending contribution order.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    pub disease: String,
    pub attribution: String,
    pub input: InputKind,
    pub normalization: Normalization,
    /// Set when every raw contribution is zero (or all equal under min-max).
    pub normalization_skipped: bool,
    pub sample_count: usize,
    pub entries: Vec<ContributionEntry>,
}

impl ContributionReport {
    pub fn top(&self, k: usize) -> &[ContributionEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// The `k` lowest entries not already among the top `skip`, still in descending order.
    pub fn bottom(&self, k: usize, skip: usize) -> &[ContributionEntry] {
        let n = self.entries.len();
        let start = n.saturating_sub(k).max(skip.min(n));
        &self.entries[start..]
    }

    pub fn to_tsv(&self, top_k: usize, bottom_k: usize) -> String {
        let mut out = format!(
            "# disease={}\n# attribution={}\n# normalization={:?}\n# samples={}\nrank\tconcept_id\tcontribution\traw\n",
            self.disease, self.attribution, self.normalization, self.sample_count
        );
        let top = self.top(top_k);
        for e in top.iter().chain(self.bottom(bottom_k, top.len())) {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\n",
                e.rank, e.concept_id, e.contribution, e.raw
            ));
        }
        out
    }
}

/// Contribution report for `disease` from a linear Stage 2 model.
///
/// Uses the rows of `logits` whose image carries `disease` in `samples`;
/// callers pass test-split logits.
pub fn contributions(
    model: &Stage2Model,
    logits: &[ConceptLogits],
    samples: &[ImageSample],
    disease: &str,
    normalization: Normalization,
) -> Result<ContributionReport, InterpretError> {
    let weights = concept_weights(model)?;
    let d = model
        .diseases
        .iter()
        .position(|x| x == disease)
        .ok_or_else(|| InterpretError::UnknownDisease(disease.to_string()))?;
    let carriers: BTreeSet<&str> = samples
        .iter()
        .filter(|s| s.disease_labels.contains(disease))
        .map(|s| s.image_id.as_str())
        .collect();
    let rows: Vec<ConceptLogits> = logits
        .iter()
        .filter(|r| carriers.contains(r.image_id.as_str()))
        .cloned()
        .collect();
    if rows.is_empty() {
        return Err(InterpretError::NoSamples(disease.to_string()));
    }
    let e = model.num_concepts();
    let x = design_matrix(&rows, e, model.hyper.input).map_err(|found| {
        let bad = rows
            .iter()
            .find(|r| r.scores.len() != e)
            .expect("mismatched row");
        InterpretError::Shape {
            image_id: bad.image_id.clone(),
            found,
            expected: e,
        }
    })?;
    let n = rows.len() as f64;
    let raw: Vec<f64> = (0..e)
        .map(|j| weights[[d, j]] * x.column(j).sum() / n)
        .collect();
    let (normalized, skipped) = normalize(&raw, normalization);

    let mut order: Vec<usize> = (0..e).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]).then(a.cmp(&b)));
    let entries = order
        .into_iter()
        .enumerate()
        .map(|(r, j)| ContributionEntry {
            concept_id: model.concept_ids[j].clone(),
            contribution: normalized[j],
            raw: raw[j],
            rank: r + 1,
        })
        .collect();
    Ok(ContributionReport {
        disease: disease.to_string(),
        attribution: ATTRIBUTION.to_string(),
        input: model.hyper.input,
        normalization,
        normalization_skipped: skipped,
        sample_count: rows.len(),
        entries,
    })
}

fn normalize(raw: &[f64], how: Normalization) -> (Vec<f64>, bool) {
    match how {
        Normalization::None => (raw.to_vec(), false),
        Normalization::Sum => {
            let pos: f64 = raw.iter().filter(|&&v| v > 0.0).sum();
            if pos > 0.0 {
                (
                    raw.iter()
                        .map(|&v| if v > 0.0 { v / pos } else { v })
                        .collect(),
                    false,
                )
            } else {
                (raw.to_vec(), true)
            }
        }
        Normalization::MinMax => {
            let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (raw.iter().map(|&v| (v - lo) / (hi - lo)).collect(), false)
            } else {
                (raw.to_vec(), true)
            }
        }
    }
}

#[cfg(test)]
mod tests;
