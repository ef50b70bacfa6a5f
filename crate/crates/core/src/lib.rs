//! Multi-agent document chunking with the ChunkScore quality metric.

pub mod chunkers;
pub mod clients;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod text;

pub use chunkers::{ChunkerConfig, Strategy};
pub use clients::{Backend, Embedder, Generator, SamplingParams, StubBackend, TokenScorer};
pub use corpus::{load_jsonl, split_sentences, validate_partition, Chunk, Document, Partition, Sentence};
pub use error::{ChunkerError, ClientError, CorpusError, MetricError, ParseError, PipelineError};
pub use metrics::{chunk_score, ScoreBreakdown, DEFAULT_ALPHA, DEFAULT_LAMBDA};
pub use text::TokenRule;
pub use pipeline::{run_pipeline, PipelineConfig, PipelineFailure, PipelineResult};
