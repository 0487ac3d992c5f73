use std::path::PathBuf;

use thiserror::Error;

use crate::concept_bank::BankError;
use crate::data::DataError;
use crate::encoders::EncoderError;
use crate::eval::EvalError;
use crate::interpret::InterpretError;
use crate::stage1::Stage1Error;
use crate::stage2::Stage2Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error; each module has its own error type that folds into this one.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Stage1(#[from] Stage1Error),
    #[error(transparent)]
    Stage2(#[from] Stage2Error),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
