use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("monitor abort at t = {time}: {reason}")]
    Abort { time: f64, reason: String },

    #[error("{0}")]
    Core(cqdyn::Error),

    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("output {file} violates its schema: {detail}")]
    Schema { file: String, detail: String },
}

impl From<cqdyn::Error> for CliError {
    fn from(e: cqdyn::Error) -> Self {
        match e {
            cqdyn::Error::Config(msg) => CliError::Config(msg),
            cqdyn::Error::MonitorAbort { time, reason } => CliError::Abort { time, reason },
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 0 success, 1 internal failure, 2 monitor abort, 3 bad config,
    /// 4 problem too large for dense analysis.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Abort { .. } => 2,
            CliError::Config(_) => 3,
            CliError::Core(cqdyn::Error::Capacity { .. }) => 4,
            _ => 1,
        }
    }
}
