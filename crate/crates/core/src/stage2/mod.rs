//! Stage 2: interpretable classifiers from concept logits to diseases.

mod end_to_end;
mod forest;
mod linalg;
mod logistic;
mod mlp;
mod model_file;
mod svm;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AccessLog, DataError, ImageSample, LabelSpace};
use crate::encoders::EncoderError;
use crate::rng::SeededRng;
use crate::stage1::{sigmoid, ConceptLogits, Stage1Error};

pub use end_to_end::{fit_end_to_end, EndToEndOutcome};
pub use forest::{fit_forest, Forest, ForestParams, Node, Tree};
pub use linalg::cholesky_solve;
pub use mlp::{fit_mlp, Adam, Mlp, MlpGrads, MlpParams};
pub use model_file::{load_model, model_from_json, model_to_json, save_model};

#[derive(Debug, Error)]
pub enum Stage2Error {
    #[error("no training rows")]
    NoTrainingData,
    #[error("concept axis mismatch: model expects {model_e} concepts (digest {model}), input has {input_e} (digest {input})")]
    ConceptMismatch {
        model: String,
        input: String,
        model_e: usize,
        input_e: usize,
    },
    #[error("logits row for `{0}` has no matching sample")]
    UnknownImage(String),
    #[error("labels: {0}")]
    Labels(String),
    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),
    #[error("invalid stage-2 config: {0}")]
    Config(String),
    #[error("model file {path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Stage1(#[from] Stage1Error),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Kind {
    LogisticRegression,
    LinearSvm,
    RandomForest,
    Mlp,
}

impl Stage2Kind {
    pub const ALL: [Stage2Kind; 4] = [
        Stage2Kind::LogisticRegression,
        Stage2Kind::LinearSvm,
        Stage2Kind::RandomForest,
        Stage2Kind::Mlp,
    ];

    pub fn short(self) -> &'static str {
        match self {
            Stage2Kind::LogisticRegression => "lr",
            Stage2Kind::LinearSvm => "svm",
            Stage2Kind::RandomForest => "rf",
            Stage2Kind::Mlp => "mlp",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Stage2Kind::LogisticRegression => "LR",
            Stage2Kind::LinearSvm => "SVM",
            Stage2Kind::RandomForest => "RF",
            Stage2Kind::Mlp => "MLP",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(self, Stage2Kind::LogisticRegression | Stage2Kind::LinearSvm)
    }
}

impl fmt::Display for Stage2Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for Stage2Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "logistic_regression" => Ok(Stage2Kind::LogisticRegression),
            "svm" | "linear_svm" => Ok(Stage2Kind::LinearSvm),
            "rf" | "random_forest" => Ok(Stage2Kind::RandomForest),
            "mlp" => Ok(Stage2Kind::Mlp),
            other => Err(format!("unknown stage-2 kind `{other}` (lr|svm|rf|mlp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    #[default]
    SingleLabel,
    MultiLabel,
}

impl FromStr for TaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "single_label" | "single" => Ok(TaskMode::SingleLabel),
            "multi_label" | "multi" => Ok(TaskMode::MultiLabel),
            other => Err(format!(
                "unknown task mode `{other}` (single_label|multi_label)"
            )),
        }
    }
}

/// What Stage 2 reads from each concept logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    #[default]
    Scores,
    Probabilities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Hyper {
    /// Inverse L2 strength of logistic regression.
    pub lr_c: f64,
    pub svm_c: f64,
    pub forest: ForestParams,
    pub mlp: MlpParams,
    pub input: InputKind,
    /// Decision threshold on probabilities in multi-label mode.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for Stage2Hyper {
    fn default() -> Self {
        Self {
            lr_c: 1.0,
            svm_c: 1.0,
            forest: ForestParams::default(),
            mlp: MlpParams::default(),
            input: InputKind::Scores,
            threshold: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    /// `K x E` weights and `K` biases.
    Linear {
        weights: Array2<f64>,
        bias: Array1<f64>,
    },
    /// One forest per disease; `None` for skipped heads.
    Forest(Vec<Option<Forest>>),
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Model {
    pub kind: Stage2Kind,
    pub mode: TaskMode,
    pub hyper: Stage2Hyper,
    pub label_space: String,
    pub diseases: Vec<String>,
    pub concept_ids: Vec<String>,
    /// Diseases without positive training rows; their heads are inactive.
    pub skipped: Vec<String>,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseasePrediction {
    pub image_id: String,
    pub scores: Vec<f64>,
    /// Predicted disease indices, ascending.
    pub decision: Vec<usize>,
}

fn concept_digest(ids: &[String]) -> String {
    let mut fp = crate::digest::Fingerprinter::new();
    for id in ids {
        fp.str(id);
    }
    fp.finish()[..16].to_string()
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

/// Stacks logits rows into `N x E`, optionally mapped through the sigmoid.
pub(crate) fn design_matrix(
    logits: &[ConceptLogits],
    e: usize,
    input: InputKind,
) -> Result<Array2<f64>, usize> {
    let mut x = Array2::zeros((logits.len(), e));
    for (i, row) in logits.iter().enumerate() {
        if row.scores.len() != e {
            return Err(row.scores.len());
        }
        for (j, &s) in row.scores.iter().enumerate() {
            x[[i, j]] = match input {
                InputKind::Scores => s,
                InputKind::Probabilities => sigmoid(s),
            };
        }
    }
    Ok(x)
}

/// `N x K` 0/1 disease targets, aligned with `logits` by image id.
pub fn disease_targets(
    logits: &[ConceptLogits],
    samples: &[ImageSample],
    space: &LabelSpace,
    mode: TaskMode,
) -> Result<Array2<f64>, Stage2Error> {
    let by_id: BTreeMap<&str, &ImageSample> =
        samples.iter().map(|s| (s.image_id.as_str(), s)).collect();
    let mut y = Array2::zeros((logits.len(), space.num_diseases()));
    for (i, row) in logits.iter().enumerate() {
        let sample = by_id
            .get(row.image_id.as_str())
            .ok_or_else(|| Stage2Error::UnknownImage(row.image_id.clone()))?;
        if mode == TaskMode::SingleLabel && sample.disease_labels.len() != 1 {
            return Err(Stage2Error::Labels(format!(
                "`{}` has {} labels; single-label mode needs exactly one",
                row.image_id,
                sample.disease_labels.len()
            )));
        }
        for d in &sample.disease_labels {
            let k = space.disease_index(d).ok_or_else(|| {
                Stage2Error::Labels(format!(
                    "`{}` is labelled `{d}`, outside the label space",
                    row.image_id
                ))
            })?;
            y[[i, k]] = 1.0;
        }
    }
    Ok(y)
}

/// Fits a stage-2 model on concept logits, labels taken from `samples`.
pub fn fit(
    kind: Stage2Kind,
    logits: &[ConceptLogits],
    samples: &[ImageSample],
    space: &LabelSpace,
    mode: TaskMode,
    hyper: &Stage2Hyper,
    access: Option<&AccessLog>,
) -> Result<Stage2Model, Stage2Error> {
    if let Some(log) = access {
        log.record_all("stage2/fit", logits.iter().map(|l| l.image_id.as_str()));
    }
    let y = disease_targets(logits, samples, space, mode)?;
    let e = space.num_concepts();
    let x =
        design_matrix(logits, e, hyper.input).map_err(|found| Stage2Error::ConceptMismatch {
            model: concept_digest(&space.concept_ids),
            input: "logits rows".into(),
            model_e: e,
            input_e: found,
        })?;
    fit_arrays(kind, x.view(), y.view(), space, mode, hyper)
}

/// Fits on an explicit design matrix (`N x E`, already transformed per
/// `hyper.input`) and 0/1 targets (`N x K`).
pub fn fit_arrays(
    kind: Stage2Kind,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    space: &LabelSpace,
    mode: TaskMode,
    hyper: &Stage2Hyper,
) -> Result<Stage2Model, Stage2Error> {
    let (n, e) = x.dim();
    let k = space.num_diseases();
    if n == 0 {
        return Err(Stage2Error::NoTrainingData);
    }
    if e != space.num_concepts() || y.dim() != (n, k) {
        return Err(Stage2Error::Config(format!(
            "design {n}x{e} / targets {:?} do not match label space ({k} diseases, {} concepts)",
            y.dim(),
            space.num_concepts()
        )));
    }
    if !(hyper.lr_c > 0.0 && hyper.svm_c > 0.0) {
        return Err(Stage2Error::Config(
            "regularisation constants must be positive".into(),
        ));
    }
    let positives: Vec<usize> = (0..k)
        .map(|d| y.column(d).iter().filter(|&&v| v > 0.5).count())
        .collect();
    let skipped: Vec<String> = (0..k)
        .filter(|&d| positives[d] == 0)
        .map(|d| space.diseases[d].clone())
        .collect();
    for d in &skipped {
        warn!("stage 2: disease `{d}` has no positive training rows; head skipped");
    }
    let mut rng = SeededRng::for_label(hyper.seed, &format!("stage2/{}", kind.short()));
    let params = match kind {
        Stage2Kind::LogisticRegression | Stage2Kind::LinearSvm => {
            let mut weights = Array2::zeros((k, e));
            let mut bias = Array1::zeros(k);
            for d in 0..k {
                if positives[d] == 0 {
                    continue;
                }
                let (w, b) = if kind == Stage2Kind::LogisticRegression {
                    logistic::fit_binary(x, y.column(d), hyper.lr_c)
                } else {
                    svm::fit_binary(x, y.column(d), hyper.svm_c, &mut rng)
                };
                weights.row_mut(d).assign(&w.mapv(round_f32));
                bias[d] = round_f32(b);
            }
            ModelParams::Linear { weights, bias }
        }
        Stage2Kind::RandomForest => ModelParams::Forest(
            (0..k)
                .map(|d| {
                    if positives[d] == 0 {
                        return None;
                    }
                    let labels: Vec<bool> = y.column(d).iter().map(|&v| v > 0.5).collect();
                    Some(fit_forest(x, &labels, &hyper.forest, &mut rng))
                })
                .collect(),
        ),
        Stage2Kind::Mlp => {
            let mut mlp = fit_mlp(x, y, mode, &hyper.mlp, &mut rng);
            mlp.map_params(round_f32);
            ModelParams::Mlp(mlp)
        }
    };
    Ok(Stage2Model {
        kind,
        mode,
        hyper: hyper.clone(),
        label_space: space.digest(),
        diseases: space.diseases.clone(),
        concept_ids: space.concept_ids.clone(),
        skipped: if kind == Stage2Kind::Mlp {
            Vec::new()
        } else {
            skipped
        },
        params,
    })
}

impl Stage2Model {
    pub fn num_diseases(&self) -> usize {
        self.diseases.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.concept_ids.len()
    }

    fn active(&self) -> Vec<bool> {
        let skipped: BTreeSet<&str> = self.skipped.iter().map(String::as_str).collect();
        self.diseases
            .iter()
            .map(|d| !skipped.contains(d.as_str()))
            .collect()
    }

    /// Raw per-disease scores (`N x K`): probabilities, or margins for SVM.
    pub fn score_matrix(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let active = self.active();
        match &self.params {
            ModelParams::Linear { weights, bias } => {
                let mut s = x.dot(&weights.t()) + bias;
                for (d, on) in active.iter().enumerate() {
                    let inactive = if self.kind == Stage2Kind::LinearSvm {
                        -1.0
                    } else {
                        0.0
                    };
                    s.column_mut(d).mapv_inplace(|v| {
                        if !on {
                            inactive
                        } else if self.kind == Stage2Kind::LogisticRegression {
                            sigmoid(v)
                        } else {
                            v
                        }
                    });
                }
                s
            }
            ModelParams::Forest(forests) => {
                let mut s = Array2::zeros((x.nrows(), forests.len()));
                for (d, forest) in forests.iter().enumerate() {
                    if let Some(f) = forest {
                        for (i, row) in x.rows().into_iter().enumerate() {
                            s[[i, d]] = f.score(row);
                        }
                    }
                }
                s
            }
            ModelParams::Mlp(mlp) => mlp.scores(x, self.mode),
        }
    }

    fn decide(&self, scores: &[f64], active: &[bool]) -> Vec<usize> {
        match self.mode {
            TaskMode::SingleLabel => {
                let mut best: Option<usize> = None;
                for (d, &s) in scores.iter().enumerate() {
                    if active[d] && best.is_none_or(|b| s > scores[b]) {
                        best = Some(d);
                    }
                }
                best.into_iter().collect()
            }
            TaskMode::MultiLabel => {
                let threshold = if self.kind == Stage2Kind::LinearSvm {
                    0.0
                } else {
                    self.hyper.threshold
                };
                (0..scores.len())
                    .filter(|&d| active[d] && scores[d] >= threshold)
                    .collect()
            }
        }
    }
}

pub fn predict(
    model: &Stage2Model,
    logits: &[ConceptLogits],
) -> Result<Vec<DiseasePrediction>, Stage2Error> {
    let e = model.num_concepts();
    let x = design_matrix(logits, e, model.hyper.input).map_err(|found| {
        Stage2Error::ConceptMismatch {
            model: concept_digest(&model.concept_ids),
            input: "logits rows".into(),
            model_e: e,
            input_e: found,
        }
    })?;
    let scores = model.score_matrix(x.view());
    let active = model.active();
    Ok(logits
        .iter()
        .zip(scores.rows())
        .map(|(row, s)| {
            let scores = s.to_vec();
            let decision = model.decide(&scores, &active);
            DiseasePrediction {
                image_id: row.image_id.clone(),
                scores,
                decision,
            }
        })
        .collect())
}

/// Checks that a logits file's concept axis matches the model's.
pub fn check_concepts(model: &Stage2Model, concept_ids: &[String]) -> Result<(), Stage2Error> {
    if model.concept_ids != concept_ids {
        return Err(Stage2Error::ConceptMismatch {
            model: concept_digest(&model.concept_ids),
            input: concept_digest(concept_ids),
            model_e: model.num_concepts(),
            input_e: concept_ids.len(),
        });
    }
    Ok(())
}

/// Fitted `K x E` weights of a linear model.
pub fn concept_weights(model: &Stage2Model) -> Result<Array2<f64>, Stage2Error> {
    match &model.params {
        ModelParams::Linear { weights, .. } => Ok(weights.clone()),
        _ => Err(Stage2Error::UnsupportedOperation(format!(
            "{} has no per-concept weights; only lr and svm models can be read directly (a surrogate explanation is needed for {})",
            model.kind.display_name(),
            model.kind.short()
        ))),
    }
}
