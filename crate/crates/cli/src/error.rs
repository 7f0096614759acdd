//! Harness errors mapped onto distinct process exit codes.

use std::path::Path;

use tenshape_core::estimator::EstimatorError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config file entries, or structure contents.
    #[error("{0}")]
    Config(String),
    /// Unreadable inputs or unwritable outputs.
    #[error("{0}")]
    Io(String),
    /// The run blew past the divergence guard or produced non-finite
    /// numbers.
    #[error("{0}")]
    Diverged(String),
    /// A report disagreed with the trace files it references.
    #[error("{0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::Mismatch(_) => EXIT_MISMATCH,
        }
    }

    pub fn io_at(path: &Path, err: std::io::Error) -> CliError {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<tenshape_core::kinematics::KinematicsError> for CliError {
    fn from(err: tenshape_core::kinematics::KinematicsError) -> Self {
        CliError::Config(err.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(err: EstimatorError) -> Self {
        match err {
            EstimatorError::Diverged { .. } | EstimatorError::NonFiniteGradient { .. } => {
                CliError::Diverged(err.to_string())
            }
            EstimatorError::SensorSource { .. } => CliError::Io(err.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}
