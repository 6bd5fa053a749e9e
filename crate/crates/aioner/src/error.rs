use std::io;
use std::path::PathBuf;

use aioner_core::corpus::CorpusError;
use aioner_core::eval::EvalError;
use aioner_core::predict::PredictError;
use aioner_core::scheme::SchemeError;
use aioner_core::train::TrainError;
use thiserror::Error;

/// Problems reading or writing one of the text and binary formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate document id `{doc_id}`")]
    DuplicateDocument { line: usize, doc_id: String },
    #[error("line {line}: {source}")]
    Label { line: usize, source: SchemeError },
    #[error("line {line}: {message}")]
    Offsets { line: usize, message: String },
    #[error("cannot write: {0}")]
    Unwritable(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FormatError {
    pub(crate) fn syntax(line: usize, message: impl Into<String>) -> Self {
        FormatError::Syntax {
            line,
            message: message.into(),
        }
    }
}

/// Everything a pipeline command can fail with, grouped by exit status.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: Box<FormatError> },
    #[error("{path}: {count} annotation problem(s) under --strict")]
    Strict { path: PathBuf, count: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl PipelineError {
    /// Process exit status: 3 parse errors, 4 configuration errors, 5
    /// evaluation mismatches, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Parse { .. } | PipelineError::Strict { .. } => 3,
            PipelineError::Config(_) => 4,
            PipelineError::Scheme(SchemeError::UnknownTask { .. }) => 4,
            PipelineError::Mismatch(_) => 5,
            PipelineError::Eval(EvalError::UnknownDocument(_) | EvalError::UnequalLengths { .. }) => 5,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, source: FormatError) -> Self {
        PipelineError::Parse {
            path: path.into(),
            source: Box::new(source),
        }
    }
}

