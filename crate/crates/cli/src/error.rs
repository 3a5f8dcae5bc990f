//! Errors surfaced by the orchestration layer, mapped to exit codes by the
//! binary: validation failures exit 1, acceptance-check failures exit 2.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(
        "missing artifact `{artifact}`: run the `{producer}` stage first (expected at {path})"
    )]
    MissingArtifact { artifact: String, producer: String, path: String },
    #[error(
        "stale artifact `{artifact}`: built from config {found}, current config is {expected}; \
         re-run the `{producer}` stage"
    )]
    StaleArtifact { artifact: String, producer: String, found: String, expected: String },
    #[error("artifact `{artifact}` has schema version {found}, expected {expected}")]
    ArtifactSchema { artifact: String, found: u32, expected: u32 },
    #[error("io error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("theory verification failed: {failures} of {checks} checks outside tolerance")]
    TheoryCheckFailed { failures: usize, checks: usize },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::TheoryCheckFailed { .. } => 2,
            _ => 1,
        }
    }
}

macro_rules! from_core {
    ($t:ty) => {
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Internal(e.to_string())
            }
        }
    };
}

from_core!(relest_core::sim::SimError);
from_core!(relest_core::estimators::EstimatorError);
from_core!(relest_core::mlp::MlpError);
from_core!(relest_core::examination::GbdtError);
from_core!(relest_core::examination::ExamError);
from_core!(relest_core::tracking::TrackError);
from_core!(relest_core::neural_dr::NeuralDrError);
from_core!(relest_core::metrics::MetricsError);
