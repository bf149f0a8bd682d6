//! Configuration-driven experiment runner for safe-set characterization.

pub mod commands;
pub mod config;
pub mod slice;

pub use config::{ExperimentSpec, SystemKind};
pub use slice::{SliceSpec, SliceSummary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Core(safeset_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<safeset_core::Error> for CliError {
    fn from(e: safeset_core::Error) -> Self {
        match e {
            safeset_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 1 for configuration and input problems, 2 for failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 2,
            _ => 1,
        }
    }
}
