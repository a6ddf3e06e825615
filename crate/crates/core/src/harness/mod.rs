//! End-to-end experiment runs.
//!
//! A run loads a dataset, drops over-long and flagged samples, predicts
//! answerability, keeps the true positives, runs every configured interpreter
//! on them, scores the sentence attributions and optionally verifies the
//! ground truth. Per-sample records go to line-delimited JSON next to the
//! report so every mean can be traced back.

mod config;
mod registry;
mod report;
mod run;

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::model::ModelError;

pub use config::{
    DatasetConfig, ExecutionConfig, InterpreterConfig, ModelConfig, ModelKind, OutputConfig,
    ReportFormat, RunConfig,
};
pub use registry::{
    ExplainRequest, Interpreter, InterpreterOutput, LoadedModel, ModelPool, Registry,
    SentenceScoreFn,
};
pub use report::{
    emit_report, load_report, render_csv, render_json, render_markdown, CellReport,
    ExperimentReport,
};
pub use run::{
    classify_predictions, prepare, prepare_from_config, run_experiment, run_verification,
    sample_seed, select_true_positives, Confusion, Disposition, DispositionCounts,
    DispositionRecord, PreparedRun, SampleRecord, DISPOSITIONS_FILE, RECORDS_FILE, REPORT_FILE,
    VERIFICATION_FILE,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model unreachable: {0}")]
    ModelUnreachable(String),
    #[error("interpreter {0:?} is not registered")]
    Unregistered(String),
    #[error("{what}: {message}")]
    Format { what: String, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
