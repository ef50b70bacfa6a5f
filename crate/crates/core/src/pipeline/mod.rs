//! QChunker orchestration: outline, candidate segmentation, selection by
//! ChunkScore, integrity review and grounded completion.

pub mod agents;
pub mod parse;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clients::{Backend, SamplingParams, TokenScorer};
use crate::corpus::{Chunk, Document, Partition};
use crate::error::{MetricError, PipelineError};
use crate::metrics::independence::perplexity;
use crate::metrics::score::{chunk_score, validate_weights};
use crate::metrics::{ScoreBreakdown, DEFAULT_ALPHA, DEFAULT_LAMBDA};
use crate::prompts;
use crate::text::TokenRule;

pub use agents::{
    argmax_cs, complete_chunk, coverage_ratio, generate_outline, review_integrity, sample_candidates,
    select_best, verify_missing_items,
};
pub use parse::{parse_outline, parse_review, parse_segmenter_output};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutline {
    pub questions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Partition>,
    pub sampling: SamplingParams,
    pub raw_outputs: Vec<String>,
    /// Raw outputs that yielded no partition.
    #[serde(default)]
    pub unparsed: Vec<usize>,
    /// Set when no output parsed and the sentence-window baseline was used.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingItem {
    pub description: String,
    /// Sentence range `[start, end)` in the document.
    pub evidence_span: Option<(usize, usize)>,
    pub grounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedItem {
    pub chunk_index: usize,
    pub description: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub chunk_index: usize,
    pub missing: Vec<MissingItem>,
    pub needs_completion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletedChunk {
    pub original: Chunk,
    pub supplements: Vec<MissingItem>,
    pub rewritten_text: String,
    pub coverage_ratio: f64,
    #[serde(default)]
    pub fallback_concat: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChunkOutput {
    Original(Chunk),
    Completed(CompletedChunk),
}

impl ChunkOutput {
    pub fn original(&self) -> &Chunk {
        match self {
            ChunkOutput::Original(c) => c,
            ChunkOutput::Completed(c) => &c.original,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            ChunkOutput::Original(c) => &c.text,
            ChunkOutput::Completed(c) => &c.rewritten_text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub backend: String,
    pub template_hash: String,
    pub lambda: f64,
    pub alpha: f64,
    pub p: usize,
    /// Wall-clock milliseconds per stage, only when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub outline_raw: Vec<String>,
    /// Raw reviewer replies per chunk of the selected partition.
    pub review_raw: Vec<Vec<String>>,
    /// Raw completion replies per chunk; empty for unflagged chunks.
    pub completion_raw: Vec<Vec<String>>,
    pub dropped_items: Vec<DroppedItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub doc_id: String,
    pub outline: QuestionOutline,
    pub candidates: CandidateSet,
    /// Parallel to `candidates.candidates`; `None` where scoring failed.
    pub scores: Vec<Option<ScoreBreakdown>>,
    pub excluded: Vec<Exclusion>,
    pub selected_index: usize,
    pub reviews: Vec<ReviewReport>,
    pub completed: Vec<ChunkOutput>,
    /// Diagnostic ChunkScore of the completed chunks, only when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_score: Option<ScoreBreakdown>,
    pub run_meta: RunMeta,
    pub audit: Audit,
}

impl PipelineResult {
    pub fn selected(&self) -> &Partition {
        &self.candidates.candidates[self.selected_index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub p: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub sampling: SamplingParams,
    pub parallelism: usize,
    pub token_rule: TokenRule,
    /// Token budget for the reviewer's view of the document; the scorer's
    /// context limit when unset.
    pub review_budget_tokens: Option<usize>,
    pub record_timings: bool,
    pub rescore_completed: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            p: 5,
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
            sampling: SamplingParams::default(),
            parallelism: 4,
            token_rule: TokenRule::default(),
            review_budget_tokens: None,
            record_timings: false,
            rescore_completed: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.p == 0 {
            return Err(PipelineError::Config("p must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(PipelineError::Config("parallelism must be at least 1".into()));
        }
        validate_weights(self.lambda, self.alpha).map_err(|e| PipelineError::Config(e.to_string()))?;
        self.sampling.validate()?;
        Ok(())
    }

    fn sampling(&self) -> SamplingParams {
        SamplingParams { seed: Some(self.sampling.seed.unwrap_or(self.seed)), ..self.sampling.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Outline,
    Segment,
    Select,
    Review,
    Complete,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        write!(f, "{}", s.as_str().unwrap_or("?"))
    }
}

/// What had been computed when a stage failed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialResult {
    pub doc_id: String,
    pub outline: Option<QuestionOutline>,
    pub candidates: Option<CandidateSet>,
    pub scores: Option<Vec<Option<ScoreBreakdown>>>,
    pub selected_index: Option<usize>,
    pub audit: Audit,
}

#[derive(Debug)]
pub struct PipelineFailure {
    pub stage: Stage,
    pub error: PipelineError,
    pub partial: Box<PartialResult>,
}

impl fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "document {:?}: {} stage failed: {}", self.partial.doc_id, self.stage, self.error)
    }
}

impl std::error::Error for PipelineFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

struct Timer {
    on: bool,
    marks: BTreeMap<String, u64>,
    at: Instant,
}

impl Timer {
    fn lap(&mut self, stage: Stage) {
        if self.on {
            self.marks.insert(stage.to_string(), self.at.elapsed().as_millis() as u64);
            self.at = Instant::now();
        }
    }
}

/// Runs every stage on one document. Model calls within a stage run
/// concurrently on a pool of `cfg.parallelism` threads; results are
/// assembled by index so the output is deterministic.
pub fn run_pipeline(
    doc: &Document,
    backend: &dyn Backend,
    cfg: &PipelineConfig,
) -> Result<PipelineResult, PipelineFailure> {
    let mut partial = PartialResult { doc_id: doc.id.clone(), ..Default::default() };
    let fail = |stage: Stage, error: PipelineError, partial: &PartialResult| PipelineFailure {
        stage,
        error,
        partial: Box::new(partial.clone()),
    };
    cfg.validate().map_err(|e| fail(Stage::Config, e, &partial))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| fail(Stage::Config, PipelineError::Config(e.to_string()), &partial))?;
    pool.install(|| run_stages(doc, backend, cfg, &mut partial).map_err(|(s, e)| fail(s, e, &partial)))
}

fn run_stages(
    doc: &Document,
    backend: &dyn Backend,
    cfg: &PipelineConfig,
    partial: &mut PartialResult,
) -> Result<PipelineResult, (Stage, PipelineError)> {
    let gen = backend.generator();
    let embedder = backend.embedder();
    let scorer = backend.scorer_for(doc);
    let params = cfg.sampling();
    let mut timer = Timer { on: cfg.record_timings, marks: BTreeMap::new(), at: Instant::now() };

    let (outline, outline_raw) =
        generate_outline(gen.as_ref(), doc, &params).map_err(|e| (Stage::Outline, e))?;
    partial.outline = Some(outline.clone());
    partial.audit.outline_raw = outline_raw;
    timer.lap(Stage::Outline);

    let candidates = sample_candidates(gen.as_ref(), doc, &outline, cfg.p, &params, cfg.token_rule)
        .map_err(|e| (Stage::Segment, e))?;
    partial.candidates = Some(candidates.clone());
    timer.lap(Stage::Segment);

    let selection = select_best(&candidates.candidates, scorer.as_ref(), embedder.as_ref(), cfg.lambda, cfg.alpha)
        .map_err(|e| (Stage::Select, e))?;
    partial.scores = Some(selection.scores.clone());
    partial.selected_index = Some(selection.selected_index);
    timer.lap(Stage::Select);

    let selected = &candidates.candidates[selection.selected_index];
    let budget = cfg.review_budget_tokens.unwrap_or_else(|| scorer.max_context_tokens());
    let reviewed: Vec<_> = selected
        .chunks
        .par_iter()
        .enumerate()
        .map(|(i, chunk)| review_integrity(gen.as_ref(), i, chunk, doc, &params, budget, cfg.token_rule))
        .collect::<Result<_, _>>()
        .map_err(|e| (Stage::Review, e))?;
    let (reviews, review_raw): (Vec<ReviewReport>, Vec<Vec<String>>) = reviewed.into_iter().unzip();
    partial.audit.review_raw = review_raw;
    timer.lap(Stage::Review);

    let completions: Vec<_> = selected
        .chunks
        .par_iter()
        .zip(&reviews)
        .map(|(chunk, report)| {
            if !report.needs_completion {
                return Ok((ChunkOutput::Original(chunk.clone()), vec![], vec![]));
            }
            let (verified, dropped) = verify_missing_items(report, doc, chunk);
            if verified.is_empty() {
                return Ok((ChunkOutput::Original(chunk.clone()), vec![], dropped));
            }
            let (done, raws) = complete_chunk(gen.as_ref(), chunk, doc, &verified, &params)?;
            Ok((ChunkOutput::Completed(done), raws, dropped))
        })
        .collect::<Result<_, PipelineError>>()
        .map_err(|e| (Stage::Complete, e))?;
    let mut completed = Vec::with_capacity(completions.len());
    for (out, raws, dropped) in completions {
        completed.push(out);
        partial.audit.completion_raw.push(raws);
        partial.audit.dropped_items.extend(dropped);
    }
    timer.lap(Stage::Complete);

    let completed_score = if cfg.rescore_completed {
        Some(rescore(doc, &completed, scorer.as_ref(), embedder.as_ref(), cfg).map_err(|e| (Stage::Complete, e.into()))?)
    } else {
        None
    };

    Ok(PipelineResult {
        doc_id: doc.id.clone(),
        outline,
        candidates,
        scores: selection.scores,
        excluded: selection.excluded,
        selected_index: selection.selected_index,
        reviews,
        completed,
        completed_score,
        run_meta: RunMeta {
            seed: cfg.seed,
            backend: backend.kind().to_string(),
            template_hash: prompts::template_hash(),
            lambda: cfg.lambda,
            alpha: cfg.alpha,
            p: cfg.p,
            timings: cfg.record_timings.then_some(timer.marks),
        },
        audit: std::mem::take(&mut partial.audit),
    })
}

fn rescore(
    doc: &Document,
    completed: &[ChunkOutput],
    scorer: &dyn TokenScorer,
    embedder: &dyn crate::clients::Embedder,
    cfg: &PipelineConfig,
) -> Result<ScoreBreakdown, MetricError> {
    let chunks = completed
        .iter()
        .map(|c| Chunk { text: c.text().to_string(), ..c.original().clone() })
        .collect();
    let part = Partition {
        doc_id: doc.id.clone(),
        boundaries: completed.iter().skip(1).map(|c| c.original().start_sentence).collect(),
        chunks,
    };
    chunk_score(&part, scorer, embedder, cfg.lambda, cfg.alpha)
}

/// Perplexity of one selected chunk before and after completion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PplPair {
    pub chunk_index: usize,
    pub original: f64,
    pub completed: f64,
    pub was_completed: bool,
}

pub fn perplexity_pairs(result: &PipelineResult, scorer: &dyn TokenScorer) -> Result<Vec<PplPair>, MetricError> {
    result
        .completed
        .iter()
        .enumerate()
        .map(|(chunk_index, out)| {
            let original = perplexity(scorer, &out.original().text)?;
            let completed = match out {
                ChunkOutput::Original(_) => original,
                ChunkOutput::Completed(c) => perplexity(scorer, &c.rewritten_text)?,
            };
            Ok(PplPair {
                chunk_index,
                original,
                completed,
                was_completed: matches!(out, ChunkOutput::Completed(_)),
            })
        })
        .collect()
}
