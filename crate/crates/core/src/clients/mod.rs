//! Model capabilities consumed by the metrics and the pipeline: token-level
//! scoring, embedding, and prompted generation.
//!
//! Backends implement the raw traits; the free functions in this module
//! ([`score_tokens`], [`embed_batch`], [`generate_n`]) enforce the contracts
//! every caller relies on (non-empty inputs, finite log-probabilities,
//! unit-norm embeddings, exact sample counts).

pub mod http;
pub mod stub;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::ClientError;
use crate::metrics::EmbeddingMatrix;

pub use http::{HttpBackend, HttpConfig, HttpReply, ReplayTransport, RetryPolicy, Transport};
pub use stub::{StubBackend, StubEmbedder, StubGenerator, StubScorer};

/// Per-token log-probabilities of a target span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScores {
    pub logprobs: Vec<f64>,
    /// Set when the context was cut from the left to fit the window.
    pub truncated: bool,
}

pub trait TokenScorer: Send + Sync {
    fn max_context_tokens(&self) -> usize;

    /// One natural-log probability per target token, conditioned on
    /// `context` (empty context means unconditional scoring).
    fn score_tokens(&self, context: &str, target: &str) -> Result<TokenScores, ClientError>;
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    /// Raw, possibly unnormalized vectors, one per input.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ClientError>;
}

pub trait Generator: Send + Sync {
    /// Returns `params.n` completions.
    fn generate(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<String>, ClientError>;
}

/// A source of the three capabilities. The scorer is requested per document
/// because the offline stub estimates its model from the document.
pub trait Backend: Send + Sync {
    fn kind(&self) -> &'static str;
    fn scorer_for(&self, doc: &Document) -> Arc<dyn TokenScorer>;
    fn embedder(&self) -> Arc<dyn Embedder>;
    fn generator(&self) -> Arc<dyn Generator>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub n: usize,
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.7,
            top_p: 0.8,
            n: 1,
            seed: None,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ClientError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ClientError::InvalidRequest(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.n == 0 {
            return Err(ClientError::InvalidRequest("n must be positive".into()));
        }
        Ok(())
    }

    pub fn with_n(&self, n: usize) -> Self {
        SamplingParams { n, ..self.clone() }
    }
}

pub fn score_tokens(
    scorer: &dyn TokenScorer,
    context: &str,
    target: &str,
) -> Result<TokenScores, ClientError> {
    if target.trim().is_empty() {
        return Err(ClientError::InvalidRequest("target is empty".into()));
    }
    let scores = scorer.score_tokens(context, target)?;
    if scores.logprobs.is_empty() {
        return Err(ClientError::InvalidRequest(
            "target tokenizes to zero tokens".into(),
        ));
    }
    if let Some(bad) = scores.logprobs.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
        return Err(ClientError::Malformed(format!("invalid log-probability {bad}")));
    }
    Ok(scores)
}

/// Embeds `texts` and L2-normalizes every column.
pub fn embed_batch(embedder: &dyn Embedder, texts: &[&str]) -> Result<EmbeddingMatrix, ClientError> {
    if texts.is_empty() {
        return Err(ClientError::InvalidRequest("no texts to embed".into()));
    }
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(ClientError::InvalidRequest("cannot embed empty text".into()));
    }
    let vectors = embedder.embed_texts(texts)?;
    if vectors.len() != texts.len() {
        return Err(ClientError::Malformed(format!(
            "expected {} embeddings, got {}",
            texts.len(),
            vectors.len()
        )));
    }
    let d = vectors[0].len();
    if d == 0 {
        return Err(ClientError::Malformed("zero-dimensional embedding".into()));
    }
    let mut columns = Vec::with_capacity(vectors.len());
    for (i, v) in vectors.into_iter().enumerate() {
        if v.len() != d {
            return Err(ClientError::Malformed(format!(
                "dimension mismatch: embedding {i} has {} entries, expected {d}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ClientError::Malformed(format!("embedding {i} is not finite")));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ClientError::Malformed(format!("embedding {i} is the zero vector")));
        }
        columns.push(v.into_iter().map(|x| x / norm).collect::<Vec<_>>());
    }
    EmbeddingMatrix::from_columns(&columns).map_err(|e| ClientError::Malformed(e.to_string()))
}

/// Draws `params.n` completions. Empty completions are requested once more;
/// if any is still empty the call fails.
pub fn generate_n(
    gen: &dyn Generator,
    prompt: &str,
    params: &SamplingParams,
) -> Result<Vec<String>, ClientError> {
    if prompt.trim().is_empty() {
        return Err(ClientError::InvalidRequest("prompt is empty".into()));
    }
    params.validate()?;
    let mut outputs = gen.generate(prompt, params)?;
    if outputs.len() != params.n {
        return Err(ClientError::Malformed(format!(
            "requested {} completions, got {}",
            params.n,
            outputs.len()
        )));
    }
    let empty: Vec<usize> = (0..outputs.len())
        .filter(|&i| outputs[i].trim().is_empty())
        .collect();
    if !empty.is_empty() {
        let retry = gen.generate(prompt, &params.with_n(empty.len()))?;
        for (slot, text) in empty.iter().zip(retry) {
            if text.trim().is_empty() {
                return Err(ClientError::Malformed("empty completion after retry".into()));
            }
            outputs[*slot] = text;
        }
        if outputs.iter().any(|o| o.trim().is_empty()) {
            return Err(ClientError::Malformed("empty completion after retry".into()));
        }
    }
    Ok(outputs)
}
