//! Evaluation protocols, metrics, reports and paper-shaped tables.

mod metrics;
mod protocol;
mod report;
mod tables;

use thiserror::Error;

use crate::data::DataError;
use crate::encoders::EncoderError;
use crate::stage1::Stage1Error;
use crate::stage2::Stage2Error;

pub use metrics::{
    average_precision, average_precision_detailed, mean_average_precision, mean_std, weighted_f1,
    ApOutcome, MapOutcome, MetricKind, MetricResult,
};
pub use protocol::{
    bank_prior_scores, run_ablation, run_base_to_novel, run_few_shot, AblationCell, AblationRow,
    AblationTable, BaseNovelResult, BaseNovelSeed, Dataset, FewShotResult, Method, ProtocolConfig,
    SeedRun, Sweep, NOVEL_SCORING_NOTE, TOKEN_GRID,
};
pub use report::{Provenance, Report, ReportResults, REPORT_FORMAT};
pub use tables::Table;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric input: {0}")]
    Metric(String),
    #[error("test split is empty")]
    EmptyTestPool,
    #[error("no test sample carries a novel class")]
    EmptyNovelTestPool,
    #[error("novel-labelled samples were read during training: {}", .0.join(", "))]
    ProtocolViolation(Vec<String>),
    #[error("seed {seed} (n={shots}) failed after {} completed runs: {source}", .completed.len())]
    SeedFailed {
        seed: u64,
        shots: usize,
        source: Box<EvalError>,
        completed: Vec<SeedRun>,
    },
    #[error("invalid protocol config: {0}")]
    Config(String),
    #[error(transparent)]
    Stage1(#[from] Stage1Error),
    #[error(transparent)]
    Stage2(#[from] Stage2Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}
