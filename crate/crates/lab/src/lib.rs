//! Experiment runner, file formats and reports for `blockmix-core`.
//!
//! * [`config`]: the TOML experiment description.
//! * [`experiment`]: trains the configured variants and checks orderings.
//! * [`io`]: CSV/JSON/JSONL readers and writers; all writes are atomic.
//! * [`report`]: merges result files from a directory.
//! * [`corpus_report`]: corpus statistics for the `corpus` subcommand.

pub mod config;
pub mod corpus_report;
pub mod experiment;
pub mod io;
pub mod report;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{}: {error}", path.display())]
    Io { path: PathBuf, error: std::io::Error },
    #[error("{}: line {line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] blockmix_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> LabError {
    let path = path.into();
    move |error| LabError::Io { path, error }
}
