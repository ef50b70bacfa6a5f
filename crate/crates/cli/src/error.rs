use std::fmt;

use qchunker_core::{ClientError, MetricError, PipelineError, PipelineFailure};

/// A command failure mapped to a process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input, configuration or I/O. Exit 1.
    Input(String),
    /// The model backend failed. Exit 2.
    Backend(String),
}

impl CliError {
    pub fn input(e: impl fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Backend(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Backend(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Config(m) => CliError::Input(format!("backend configuration: {m}")),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Client(c) => c.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<PipelineFailure> for CliError {
    fn from(f: PipelineFailure) -> Self {
        match &f.error {
            PipelineError::Config(_) => CliError::Input(f.to_string()),
            _ => CliError::Backend(f.to_string()),
        }
    }
}
