//! Experiment runner: dataset synthesis, training, evaluation and figure data.
//!
//! An output directory holds one experiment:
//!
//! ```text
//! config.toml       resolved configuration
//! manifest.json     files written, config hash, timings
//! data/             snapshot groups (binary + CSV)
//! reference/        Monte-Carlo reference statistics
//! runs/d<D>-s<S>/   checkpoint, loss trace and W1 trace per noise dim / seed
//! metrics/          metrics.csv and one CSV per figure
//! plots/            SVG line plots of the figure CSVs
//! ```

use std::io;

use pigan::elliptic::EllipticError;
use pigan::gan::{CheckpointError, GanError};
use pigan::metrics::MetricsError;
use pigan::processes::{DatasetError, ProcessError};
use thiserror::Error;

pub mod config;
pub mod eval;
pub mod manifest;
pub mod pipeline;
pub mod plot;
pub mod presets;
pub mod reference;
pub mod workspace;

pub use config::{parse_config, ExperimentConfig, Scale};
pub use manifest::RunManifest;
pub use pipeline::{Experiment, TrainOptions};
pub use workspace::Workspace;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Data(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<GanError> for CliError {
    fn from(e: GanError) -> Self {
        match e {
            GanError::Config(_) | GanError::Layout(_) | GanError::NoiseDim { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<EllipticError> for CliError {
    fn from(e: EllipticError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<ProcessError> for CliError {
    fn from(e: ProcessError) -> Self {
        match e {
            ProcessError::Cholesky { .. } | ProcessError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(io) => CliError::Io(io),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(io) => CliError::Io(io),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
