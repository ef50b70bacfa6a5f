use std::path::PathBuf;

use thiserror::Error;

/// Errors from corpus ingestion and partition validation.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("boundaries non-increasing at position {position} (value {value})")]
    NonIncreasing { position: usize, value: usize },
    #[error("boundary at position {position} out of range: {value} not in (0, {sentence_count})")]
    OutOfRange {
        position: usize,
        value: usize,
        sentence_count: usize,
    },
}

/// Errors surfaced by model backends.
#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<ClientError> },
}

impl ClientError {
    /// Transport failures, throttling, and server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Errors from the metric computations.
#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Errors from parsing structured agent output.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("no valid boundaries found in segmenter output")]
    NoBoundaries,
    #[error("no questions found in outline output")]
    NoQuestions,
    #[error("unrecognized review output: {0}")]
    Review(String),
}

/// Errors from the baseline chunkers.
#[derive(Debug, Error)]
pub enum ChunkerError {
    #[error("invalid chunker config: {0}")]
    Config(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Errors from a single pipeline stage.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Chunker(#[from] ChunkerError),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("every candidate failed to score: {0}")]
    NoScorableCandidate(String),
}
