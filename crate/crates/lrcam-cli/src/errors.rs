//! CLI error classification. Each variant maps to a distinct exit code so
//! scripts can tell configuration mistakes from solver or training failures.

use lrcam::config::ConfigError;
use lrcam::env::{SpawnError, TraceError};
use lrcam::learner::TrainError;
use lrcam::nn::NnError;
use lrcam::reachability::ReachError;
use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config file, or inconsistent inputs (exit 2).
    Config(String),
    /// The solver ran out of iterations before reaching the tolerance (exit 3).
    Unconverged(String),
    /// Training produced non-finite parameters or losses (exit 4).
    Diverged(String),
    /// Filesystem or file-format failure (exit 5).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Unconverged(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Unconverged(m) => write!(f, "did not converge: {m}"),
            CliError::Diverged(m) => write!(f, "training diverged: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ReachError> for CliError {
    fn from(e: ReachError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite(m) => CliError::Diverged(m),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<SpawnError> for CliError {
    fn from(e: SpawnError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::Spawn(s) => CliError::Config(s.to_string()),
            TrainError::Nn(n) => n.into(),
        }
    }
}
