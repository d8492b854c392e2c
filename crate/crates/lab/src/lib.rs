//! Experiment driver for `scatterlab-core`: JSON configurations, check
//! suites, sweeps, reports, CSV tables and matrix dumps.

pub mod config;
pub mod dump;
pub mod experiments;
pub mod report;
pub mod runner;
pub mod sweep;

use thiserror::Error;

pub use config::ExperimentConfig;
pub use report::{CheckRecord, RunReport};

/// Environment variable overriding the basis dimension cap.
pub const DIM_CAP_ENV: &str = "SCATTERLAB_DIM_CAP";

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] scatterlab_core::Error),
}

impl LabError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Core(scatterlab_core::Error::DimensionCapExceeded { .. }) => 2,
            _ => 1,
        }
    }
}

/// Dimension cap from the environment, falling back to the core default.
pub fn dimension_cap() -> Result<usize, LabError> {
    match std::env::var(DIM_CAP_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| LabError::Config(format!("{DIM_CAP_ENV}: expected a positive integer, got {v:?}"))),
        Err(_) => Ok(scatterlab_core::fock::DEFAULT_DIMENSION_CAP),
    }
}
