//! Samples, label spaces, concept targets, few-shot episodes, base/novel
//! splits and the synthetic dataset generator.

mod episode;
mod manifest;
mod split;
mod synthetic;
mod targets;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Fingerprinter;

pub use episode::{sample_episode, FewShotEpisode};
pub use manifest::{load_manifest, manifest_hash, parse_manifest, write_manifest};
pub use split::{split_base_novel, BaseNovelSplit};
pub use synthetic::{
    generate_synthetic, parse_signature, synthetic_concept_sets, SynthConfig, SyntheticDataset,
    SYNTH_SCHEME,
};
pub use targets::{derive_concept_targets, ConceptTarget};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest rows reference unknown diseases: {}", format_offenders(.0))]
    UnknownDiseases(Vec<(usize, String)>),
    #[error("duplicate image_id `{0}`")]
    DuplicateImage(String),
    #[error("manifest line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("manifest: {0}")]
    Csv(String),
    #[error("bank must be frozen before deriving concept targets")]
    BankNotFrozen,
    #[error("disease `{0}` has no concepts in the bank and cannot be trained")]
    EmptyConceptSet(String),
    #[error("label space does not contain disease `{0}`")]
    NotInLabelSpace(String),
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("invalid synthetic config: {0}")]
    SynthConfig(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn format_offenders(rows: &[(usize, String)]) -> String {
    rows.iter()
        .map(|(line, name)| format!("line {line}: `{name}`"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSample {
    pub image_id: String,
    pub image_ref: String,
    pub disease_labels: BTreeSet<String>,
    pub split: Split,
}

impl ImageSample {
    pub fn has_any(&self, diseases: &BTreeSet<String>) -> bool {
        self.disease_labels.iter().any(|d| diseases.contains(d))
    }
}

/// Fixed orderings of diseases (K) and concepts (E) shared by every stage.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelSpace {
    pub diseases: Vec<String>,
    pub concept_ids: Vec<String>,
}

impl LabelSpace {
    pub fn num_diseases(&self) -> usize {
        self.diseases.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.concept_ids.len()
    }

    pub fn disease_index(&self, name: &str) -> Option<usize> {
        self.diseases
            .binary_search_by(|d| d.as_str().cmp(name))
            .ok()
    }

    pub fn concept_index(&self, id: &str) -> Option<usize> {
        self.concept_ids.iter().position(|c| c == id)
    }

    pub fn digest(&self) -> String {
        let mut fp = Fingerprinter::new();
        fp.str("diseases").u64(self.diseases.len() as u64);
        for d in &self.diseases {
            fp.str(d);
        }
        fp.str("concepts").u64(self.concept_ids.len() as u64);
        for c in &self.concept_ids {
            fp.str(c);
        }
        fp.finish()
    }

    /// Same label space with the concept axis reordered by `perm`
    /// (new position i holds old concept `perm[i]`).
    pub fn with_concept_order(&self, perm: &[usize]) -> Self {
        Self {
            diseases: self.diseases.clone(),
            concept_ids: perm.iter().map(|&i| self.concept_ids[i].clone()).collect(),
        }
    }
}

/// Records every image id read by a training or fitting routine, so callers
/// can prove which samples influenced a model.
#[derive(Debug, Default)]
pub struct AccessLog {
    entries: Mutex<Vec<(String, String)>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, stage: &str, image_id: &str) {
        self.entries
            .lock()
            .expect("access log")
            .push((stage.to_string(), image_id.to_string()));
    }

    pub fn record_all<'a>(&self, stage: &str, ids: impl IntoIterator<Item = &'a str>) {
        let mut entries = self.entries.lock().expect("access log");
        entries.extend(
            ids.into_iter()
                .map(|id| (stage.to_string(), id.to_string())),
        );
    }

    /// `(stage, image_id)` pairs in read order.
    pub fn entries(&self) -> Vec<(String, String)> {
        self.entries.lock().expect("access log").clone()
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.entries
            .lock()
            .expect("access log")
            .iter()
            .map(|(_, id)| id.clone())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.lock().expect("access log").is_empty()
    }
}
