//! Perplexity and logical independence.
//!
//! `LI(c_i, c_{i−1}) = PPL(c_i | c_{i−1}) / PPL(c_i)`, clamped to `[0, 1]`,
//! and `Φ_LI` is the mean over the `K − 1` internal boundaries (1.0 when
//! there are none).

use rayon::prelude::*;

use crate::clients::{score_tokens, TokenScorer};
use crate::corpus::{Chunk, Partition};
use crate::error::MetricError;

/// `exp(−mean log-prob)`.
pub fn ppl_from_logprobs(logprobs: &[f64]) -> Result<f64, MetricError> {
    if logprobs.is_empty() {
        return Err(MetricError::InvalidInput("no tokens to score".into()));
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    let ppl = (-mean).exp();
    if !ppl.is_finite() || ppl <= 0.0 {
        return Err(MetricError::NonFinite(format!("perplexity {ppl}")));
    }
    Ok(ppl)
}

pub fn perplexity(scorer: &dyn TokenScorer, target: &str) -> Result<f64, MetricError> {
    let scores = score_tokens(scorer, "", target)?;
    ppl_from_logprobs(&scores.logprobs)
}

/// Perplexity of `target` with `context` prepended. An empty context is a
/// caller error; use [`perplexity`] for unconditional scoring.
pub fn conditional_perplexity(
    scorer: &dyn TokenScorer,
    context: &str,
    target: &str,
) -> Result<f64, MetricError> {
    if context.trim().is_empty() {
        return Err(MetricError::InvalidInput(
            "conditional perplexity needs a non-empty context".into(),
        ));
    }
    let scores = score_tokens(scorer, context, target)?;
    ppl_from_logprobs(&scores.logprobs)
}

pub fn clamp_li(ratio: f64) -> f64 {
    ratio.clamp(0.0, 1.0)
}

/// Raw ratio and clamped value for one boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryLi {
    pub ratio: f64,
    pub li: f64,
}

pub fn boundary_li(
    scorer: &dyn TokenScorer,
    prev: &Chunk,
    cur: &Chunk,
) -> Result<BoundaryLi, MetricError> {
    let unconditional = perplexity(scorer, &cur.text)?;
    let conditional = conditional_perplexity(scorer, &prev.text, &cur.text)?;
    let ratio = conditional / unconditional;
    if !ratio.is_finite() {
        return Err(MetricError::NonFinite(format!("LI ratio {ratio}")));
    }
    Ok(BoundaryLi { ratio, li: clamp_li(ratio) })
}

pub fn logical_independence(
    scorer: &dyn TokenScorer,
    prev: &Chunk,
    cur: &Chunk,
) -> Result<f64, MetricError> {
    Ok(boundary_li(scorer, prev, cur)?.li)
}

/// LI for every internal boundary, in order. Boundaries are scored in
/// parallel; the output order is fixed by chunk index.
pub fn boundary_lis(
    scorer: &dyn TokenScorer,
    partition: &Partition,
) -> Result<Vec<BoundaryLi>, MetricError> {
    partition
        .chunks
        .par_windows(2)
        .map(|w| boundary_li(scorer, &w[0], &w[1]))
        .collect()
}

/// Mean of per-boundary values; 1.0 for a single chunk.
pub fn mean_li(values: &[f64]) -> f64 {
    if values.is_empty() {
        1.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn phi_li(scorer: &dyn TokenScorer, partition: &Partition) -> Result<f64, MetricError> {
    let lis: Vec<f64> = boundary_lis(scorer, partition)?.iter().map(|b| b.li).collect();
    Ok(mean_li(&lis))
}
