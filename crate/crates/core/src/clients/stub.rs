//! Deterministic offline backend.
//!
//! * Scorer: an interpolated bigram/unigram model whose counts come from the
//!   text being read (context, then the target prefix), with add-one
//!   smoothing over a fixed vocabulary plus an UNK token. Context that
//!   repeats the target makes the target predictable, which is the behaviour
//!   logical independence needs.
//! * Embedder: hashed bag of words over normalized tokens.
//! * Generator: dispatches on the prompt tag and emits schema-valid output.
//!
//! Every output is a pure function of the inputs and the seed.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Backend, Embedder, Generator, SamplingParams, TokenScorer, TokenScores};
use crate::corpus::Document;
use crate::error::ClientError;
use crate::prompts::{self, PromptTag};
use crate::text::normalized_tokens;

pub const BIGRAM_WEIGHT: f64 = 0.7;
pub const UNIGRAM_WEIGHT: f64 = 0.3;
pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_MAX_CONTEXT_TOKENS: usize = 8192;
/// Sentences per chunk the stub segmenter aims for.
pub const STUB_SENTENCES_PER_CHUNK: usize = 6;

const UNK: &str = "<unk>";

/// FNV-1a folded through a splitmix64 finalizer. Stable across platforms
/// and toolchains, unlike `DefaultHasher`.
pub fn stable_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

#[derive(Debug, Clone)]
pub struct StubBackend {
    pub seed: u64,
    pub embed_dim: usize,
}

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        StubBackend {
            seed,
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }
}

impl Backend for StubBackend {
    fn kind(&self) -> &'static str {
        "stub"
    }

    fn scorer_for(&self, doc: &Document) -> Arc<dyn TokenScorer> {
        Arc::new(StubScorer::from_texts(&[doc.text.as_str()]))
    }

    fn embedder(&self) -> Arc<dyn Embedder> {
        Arc::new(StubEmbedder::new(self.seed, self.embed_dim))
    }

    fn generator(&self) -> Arc<dyn Generator> {
        Arc::new(StubGenerator::new(self.seed))
    }
}

#[derive(Debug, Clone)]
enum ScorerModel {
    /// Every token gets probability 1/V.
    Uniform { vocab_size: usize },
    /// Vocabulary without UNK.
    Cache { vocab: HashSet<String> },
}

#[derive(Debug, Clone)]
pub struct StubScorer {
    model: ScorerModel,
    max_context_tokens: usize,
}

impl StubScorer {
    /// Cache model over the vocabulary of `texts`.
    pub fn from_texts(texts: &[&str]) -> Self {
        let vocab = texts.iter().flat_map(|t| normalized_tokens(t)).collect();
        StubScorer {
            model: ScorerModel::Cache { vocab },
            max_context_tokens: DEFAULT_MAX_CONTEXT_TOKENS,
        }
    }

    pub fn uniform(vocab_size: usize) -> Self {
        StubScorer {
            model: ScorerModel::Uniform {
                vocab_size: vocab_size.max(1),
            },
            max_context_tokens: DEFAULT_MAX_CONTEXT_TOKENS,
        }
    }

    pub fn with_max_context_tokens(mut self, n: usize) -> Self {
        self.max_context_tokens = n.max(1);
        self
    }

    /// V: vocabulary size including UNK.
    pub fn vocab_size(&self) -> usize {
        match &self.model {
            ScorerModel::Uniform { vocab_size } => *vocab_size,
            ScorerModel::Cache { vocab } => vocab.len() + 1,
        }
    }

    fn map_token(&self, tok: String) -> String {
        match &self.model {
            ScorerModel::Cache { vocab } if !vocab.contains(&tok) => UNK.to_string(),
            _ => tok,
        }
    }
}

impl TokenScorer for StubScorer {
    fn max_context_tokens(&self) -> usize {
        self.max_context_tokens
    }

    fn score_tokens(&self, context: &str, target: &str) -> Result<TokenScores, ClientError> {
        let target: Vec<String> = normalized_tokens(target)
            .into_iter()
            .map(|t| self.map_token(t))
            .collect();
        let mut context: Vec<String> = normalized_tokens(context)
            .into_iter()
            .map(|t| self.map_token(t))
            .collect();
        let budget = self.max_context_tokens.saturating_sub(target.len());
        let truncated = context.len() > budget;
        if truncated {
            context.drain(..context.len() - budget);
        }
        let v = self.vocab_size() as f64;

        if let ScorerModel::Uniform { .. } = self.model {
            return Ok(TokenScores {
                logprobs: vec![-v.ln(); target.len()],
                truncated,
            });
        }

        // Counts are updated as the stream is read: context first, then each
        // target token after it has been scored.
        let stream: Vec<&str> = context.iter().chain(target.iter()).map(String::as_str).collect();
        let mut unigram: HashMap<&str, usize> = HashMap::new();
        let mut bigram: HashMap<(&str, &str), usize> = HashMap::new();
        let mut left: HashMap<&str, usize> = HashMap::new();
        let mut logprobs = Vec::with_capacity(target.len());
        for (pos, &tok) in stream.iter().enumerate() {
            let prev = pos.checked_sub(1).map(|p| stream[p]);
            if pos >= context.len() {
                let uni = (*unigram.get(tok).unwrap_or(&0) as f64 + 1.0) / (pos as f64 + v);
                let bi = match prev {
                    None => 1.0 / v,
                    Some(p) => {
                        let c = *bigram.get(&(p, tok)).unwrap_or(&0) as f64;
                        let l = *left.get(p).unwrap_or(&0) as f64;
                        (c + 1.0) / (l + v)
                    }
                };
                logprobs.push((BIGRAM_WEIGHT * bi + UNIGRAM_WEIGHT * uni).ln());
            }
            *unigram.entry(tok).or_insert(0) += 1;
            if let Some(p) = prev {
                *bigram.entry((p, tok)).or_insert(0) += 1;
                *left.entry(p).or_insert(0) += 1;
            }
        }
        Ok(TokenScores { logprobs, truncated })
    }
}

#[derive(Debug, Clone)]
pub struct StubEmbedder {
    seed: u64,
    dim: usize,
}

impl StubEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        StubEmbedder { seed, dim: dim.max(2) }
    }

    /// Unnormalized hashed bag of words. Each token adds ±1 at a coordinate
    /// chosen by its hash.
    pub fn raw_vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in normalized_tokens(text) {
            let h = stable_hash(tok.as_bytes(), self.seed);
            let idx = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        if v.iter().all(|x| *x == 0.0) {
            let h = stable_hash(text.as_bytes(), self.seed ^ 0x5eed);
            v[(h % self.dim as u64) as usize] = 1.0;
        }
        v
    }
}

impl Embedder for StubEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ClientError> {
        Ok(texts.iter().map(|t| self.raw_vector(t)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct StubGenerator {
    seed: u64,
}

const STOPWORDS: &[&str] = &[
    "the", "this", "that", "these", "those", "a", "an", "it", "its", "there", "they", "he", "she",
    "we", "you", "i", "in", "on", "at", "for", "of", "and", "but", "or", "if", "when", "while",
    "after", "before", "with", "by", "from", "to", "as", "all", "each", "every", "some", "many",
    "most", "such", "then", "thus", "also", "because", "what", "which", "who", "how", "why",
];

fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(&word.to_lowercase().as_str())
}

fn clean_word(w: &str) -> &str {
    w.trim_matches(|c: char| !c.is_alphanumeric())
}

/// A definition sentence starts with a capitalized, non-stopword term
/// followed by "is", "are", "means", "denotes" or "refers to". Returns the
/// lowercased term.
pub fn definition_term(sentence: &str) -> Option<String> {
    let mut words = sentence.split_whitespace();
    let first = clean_word(words.next()?);
    let verb = words.next().map(clean_word)?;
    if first.chars().count() < 2
        || !first.chars().next()?.is_uppercase()
        || is_stopword(first)
    {
        return None;
    }
    let verb = verb.to_lowercase();
    let defines = matches!(verb.as_str(), "is" | "are" | "means" | "denotes")
        || (verb == "refers" && words.next().map(clean_word) == Some("to"));
    defines.then(|| first.to_lowercase())
}

impl StubGenerator {
    pub fn new(seed: u64) -> Self {
        StubGenerator { seed }
    }

    fn outline(&self, prompt: &str) -> String {
        let doc = prompts::section(prompt, "DOCUMENT").unwrap_or(prompt);
        let mut seen = HashSet::new();
        let mut terms = Vec::new();
        for word in doc.split_whitespace() {
            let w = clean_word(word);
            let capitalized = w.chars().next().is_some_and(|c| c.is_uppercase());
            if capitalized
                && w.chars().count() >= 3
                && w.chars().all(char::is_alphanumeric)
                && !is_stopword(w)
                && seen.insert(w.to_lowercase())
            {
                terms.push(w.to_string());
            }
            if terms.len() == 8 {
                break;
            }
        }
        if terms.is_empty() {
            return "1. What is the main subject of this document?".into();
        }
        terms
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}. What role does {t} play in this document?", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn segment(&self, prompt: &str, params: &SamplingParams) -> Vec<String> {
        let body = prompts::section(prompt, "SENTENCES").unwrap_or("");
        let n = prompts::parse_numbered_lines(body).len();
        let k = ((n as f64 / STUB_SENTENCES_PER_CHUNK as f64).round() as usize).clamp(1, n.max(1));
        let base: Vec<usize> = (1..k)
            .map(|i| ((i * n) as f64 / k as f64).round() as usize)
            .filter(|&b| b > 0 && b < n)
            .collect();

        let seed = params.seed.unwrap_or(self.seed) ^ stable_hash(prompt.as_bytes(), 0);
        let mut samples: Vec<Vec<usize>> = Vec::with_capacity(params.n);
        for j in 0..params.n {
            if j == 0 || params.temperature == 0.0 || n < 2 {
                samples.push(base.clone());
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(j as u64));
            let mut proposal = base.clone();
            for attempt in 0..64 {
                proposal = if attempt < 32 && !base.is_empty() {
                    let mut p: Vec<usize> = base
                        .iter()
                        .map(|&b| {
                            let shifted = b as i64 + rng.random_range(-2..=2);
                            shifted.clamp(1, n as i64 - 1) as usize
                        })
                        .collect();
                    p.sort_unstable();
                    p.dedup();
                    p
                } else {
                    let kk = rng.random_range(2..=(k + 1).min(n).max(2));
                    let mut p: Vec<usize> =
                        (1..kk).map(|_| rng.random_range(1..n)).collect();
                    p.sort_unstable();
                    p.dedup();
                    p
                };
                if !samples.contains(&proposal) {
                    break;
                }
            }
            samples.push(proposal);
        }
        samples.into_iter().map(|b| render_boundaries(&b)).collect()
    }

    fn review(&self, prompt: &str) -> String {
        let range: Vec<usize> = prompts::section(prompt, "RANGE")
            .unwrap_or("")
            .split_whitespace()
            .filter_map(|t| t.parse().ok())
            .collect();
        let (start, end) = match range.as_slice() {
            [s, e] => (*s, *e),
            _ => return "COMPLETE".into(),
        };
        let sentences = prompts::parse_numbered_lines(prompts::section(prompt, "DOCUMENT").unwrap_or(""));
        let inside = |i: usize| (start..end).contains(&i);

        let mut defined_inside = HashSet::new();
        let mut chunk_tokens = HashSet::new();
        for (i, s) in &sentences {
            if inside(*i) {
                chunk_tokens.extend(normalized_tokens(s));
                if let Some(t) = definition_term(s) {
                    defined_inside.insert(t);
                }
            }
        }
        let mut flagged = HashSet::new();
        let mut missing = Vec::new();
        for (i, s) in &sentences {
            if inside(*i) {
                continue;
            }
            if let Some(term) = definition_term(s) {
                if chunk_tokens.contains(&term)
                    && !defined_inside.contains(&term)
                    && flagged.insert(term)
                {
                    missing.push(serde_json::json!({
                        "description": s,
                        "evidence": [i, i + 1],
                    }));
                }
            }
        }
        if missing.is_empty() {
            "COMPLETE".into()
        } else {
            serde_json::json!({ "needs_completion": true, "missing": missing }).to_string()
        }
    }

    fn complete(&self, prompt: &str) -> String {
        let chunk = prompts::section(prompt, "CHUNK").unwrap_or("").trim_end();
        let evidence: Vec<&str> = prompts::section(prompt, "EVIDENCE")
            .unwrap_or("")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if evidence.is_empty() {
            chunk.to_string()
        } else {
            format!("{chunk} {}", evidence.join(" "))
        }
    }
}

pub fn render_boundaries(b: &[usize]) -> String {
    if b.is_empty() {
        "no split".into()
    } else {
        let list: Vec<String> = b.iter().map(|x| x.to_string()).collect();
        format!("boundaries: [{}]", list.join(", "))
    }
}

impl Generator for StubGenerator {
    fn generate(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<String>, ClientError> {
        let tag = PromptTag::parse(prompt).ok_or_else(|| {
            ClientError::InvalidRequest("stub generator: prompt has no recognized tag".into())
        })?;
        Ok(match tag {
            PromptTag::Segment => self.segment(prompt, params),
            PromptTag::Outline => vec![self.outline(prompt); params.n],
            PromptTag::Review => vec![self.review(prompt); params.n],
            PromptTag::Complete => vec![self.complete(prompt); params.n],
        })
    }
}
