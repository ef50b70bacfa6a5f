//! Baseline chunkers: fixed length, sentence-window, and semantic similarity.
//!
//! All three cut on sentence boundaries so their output is an ordinary
//! [`Partition`].

use serde::{Deserialize, Serialize};

use crate::clients::{embed_batch, Embedder};
use crate::corpus::{validate_partition, Document, Partition};
use crate::error::ChunkerError;
use crate::text::{count_tokens, TokenRule};

pub const DEFAULT_TARGET_LEN: usize = 178;
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Fixed,
    #[default]
    Sentence,
    Semantic,
}

impl Strategy {
    /// Label written to output metadata.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Fixed => "fixed(sentence-granular)",
            Strategy::Sentence => "sentence",
            Strategy::Semantic => "semantic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkerConfig {
    pub strategy: Strategy,
    /// Characters for `fixed`, tokens for `sentence`.
    pub target_len: usize,
    pub similarity_threshold: f64,
    pub token_rule: TokenRule,
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        ChunkerConfig {
            strategy: Strategy::default(),
            target_len: DEFAULT_TARGET_LEN,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            token_rule: TokenRule::default(),
        }
    }
}

impl ChunkerConfig {
    pub fn validate(&self) -> Result<(), ChunkerError> {
        if self.target_len == 0 {
            return Err(ChunkerError::Config("target_len must be at least 1".into()));
        }
        // −1 is allowed: it is the documented way to force a single chunk.
        if !(-1.0..=1.0).contains(&self.similarity_threshold) {
            return Err(ChunkerError::Config(format!(
                "similarity_threshold must be in [-1, 1], got {}",
                self.similarity_threshold
            )));
        }
        Ok(())
    }

    /// Runs the configured strategy. `embedder` is only used by `semantic`.
    pub fn chunk(&self, doc: &Document, embedder: &dyn Embedder) -> Result<Partition, ChunkerError> {
        self.validate()?;
        match self.strategy {
            Strategy::Fixed => Ok(fixed_length(doc, self.target_len)),
            Strategy::Sentence => Ok(sentence_window(doc, self.target_len, self.token_rule)),
            Strategy::Semantic => semantic_similarity(doc, embedder, self.similarity_threshold),
        }
    }
}

fn finish(doc: &Document, boundaries: &[usize]) -> Partition {
    validate_partition(doc, boundaries).expect("chunker produced an invalid partition")
}

/// Greedy accumulation of whole sentences until the chunk holds at least
/// `target_len` characters of sentence content.
pub fn fixed_length(doc: &Document, target_len: usize) -> Partition {
    let target = target_len.max(1);
    let n = doc.sentence_count();
    let mut boundaries = Vec::new();
    let mut acc = 0usize;
    for (i, s) in doc.sentences.iter().enumerate() {
        acc += s.content.chars().count();
        if acc >= target && i + 1 < n {
            boundaries.push(i + 1);
            acc = 0;
        }
    }
    finish(doc, &boundaries)
}

/// Accumulates sentences by token count. When a sentence would push the
/// chunk past the target, the cut goes before or after it, whichever leaves
/// the chunk closer to the target; ties cut before.
pub fn sentence_window(doc: &Document, target_tokens: usize, rule: TokenRule) -> Partition {
    let target = target_tokens.max(1) as i64;
    let n = doc.sentence_count();
    let mut boundaries = Vec::new();
    let mut acc: i64 = 0;
    for (i, s) in doc.sentences.iter().enumerate() {
        let t = count_tokens(&s.content, rule) as i64;
        if acc > 0 && acc + t > target && (acc + t - target).abs() >= (acc - target).abs() {
            boundaries.push(i);
            acc = 0;
        }
        acc += t;
        if acc >= target && i + 1 < n {
            boundaries.push(i + 1);
            acc = 0;
        }
    }
    finish(doc, &boundaries)
}

/// Cosine similarity of each adjacent sentence pair, in order.
pub fn adjacent_similarities(doc: &Document, embedder: &dyn Embedder) -> Result<Vec<f64>, ChunkerError> {
    let texts: Vec<&str> = doc.sentences.iter().map(|s| s.content.as_str()).collect();
    let z = embed_batch(embedder, &texts)?;
    Ok((1..z.k())
        .map(|i| z.column(i - 1).iter().zip(z.column(i)).map(|(a, b)| a * b).sum())
        .collect())
}

/// Cuts after sentence `i` whenever `cos(z_i, z_{i+1}) < threshold`.
pub fn semantic_similarity(
    doc: &Document,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<Partition, ChunkerError> {
    let sims = adjacent_similarities(doc, embedder)?;
    let boundaries: Vec<usize> = sims
        .iter()
        .enumerate()
        .filter(|(_, &c)| c < threshold)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(finish(doc, &boundaries))
}
