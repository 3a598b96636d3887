//! Command line harness: scenario files, built-in intersection presets, and
//! the train / evaluate / finetune / compare commands.

use std::path::PathBuf;

use greenlight::baselines::BaselineError;
use greenlight::nn::CheckpointError;
use greenlight::ppo::PpoError;
use greenlight::sim::SimError;
use thiserror::Error;

pub mod commands;
pub mod presets;
pub mod report;
pub mod scenario;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("scenario '{name}': {message}")]
    Scenario { name: String, message: String },
    #[error("unknown preset '{0}' (available: INT-1 .. INT-11)")]
    UnknownPreset(String),
    #[error("unknown controller '{0}' (expected fixtime[-SECONDS], webster or sotl[-THETA])")]
    UnknownController(String),
    #[error("checkpoint extractor is '{found}' but '{expected}' was requested")]
    ExtractorMismatch { expected: String, found: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Adapter(#[from] greenlight::lora::LoraError),
    #[error(transparent)]
    Train(#[from] PpoError),
    #[error("reports disagree: {0}")]
    ReportMismatch(String),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> HarnessError {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
