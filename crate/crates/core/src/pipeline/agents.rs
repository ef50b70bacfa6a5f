//! The four agents: outline, segmentation, integrity review, completion.

use rayon::prelude::*;

use crate::chunkers::sentence_window;
use crate::clients::{generate_n, Embedder, Generator, SamplingParams, TokenScorer};
use crate::corpus::{Chunk, Document, Partition};
use crate::error::{MetricError, PipelineError};
use crate::metrics::rouge::rouge_l;
use crate::metrics::score::chunk_score;
use crate::metrics::ScoreBreakdown;
use crate::prompts::{self, numbered_line, render};
use crate::text::{count_tokens, normalized_tokens, TokenRule};

use super::parse::{parse_outline, parse_review, parse_segmenter_output};
use super::{
    CandidateSet, CompletedChunk, DroppedItem, Exclusion, MissingItem, QuestionOutline,
    ReviewReport,
};

/// Description recall against the evidence text needed to keep an item.
pub const GROUNDING_RECALL: f64 = 0.5;
/// Recall at which an original sentence counts as preserved in a rewrite.
pub const SENTENCE_RECALL: f64 = 0.8;
/// Share of preserved sentences a rewrite must reach.
pub const COVERAGE_GATE: f64 = 0.9;
/// Relative margin a later candidate must beat the incumbent by.
pub const TIE_TOLERANCE: f64 = 1e-12;
pub const FALLBACK_TARGET_LEN: usize = 178;

fn single(params: &SamplingParams) -> SamplingParams {
    params.with_n(1)
}

fn numbered(doc: &Document, range: std::ops::Range<usize>) -> String {
    doc.sentences[range]
        .iter()
        .map(|s| numbered_line(s.index, &s.content))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks for a question outline, retrying once with a format reminder.
/// Returns the outline and every raw reply.
pub fn generate_outline(
    gen: &dyn Generator,
    doc: &Document,
    params: &SamplingParams,
) -> Result<(QuestionOutline, Vec<String>), PipelineError> {
    let mut raws = Vec::new();
    for reminder in ["", prompts::OUTLINE_REMINDER.trim_end()] {
        let prompt = render(prompts::OUTLINE, &[("reminder", reminder), ("document", &doc.text)]);
        let raw = generate_n(gen, &prompt, &single(params))?.remove(0);
        let parsed = parse_outline(&raw);
        raws.push(raw);
        if let Ok(questions) = parsed {
            return Ok((QuestionOutline { questions }, raws));
        }
    }
    Err(crate::error::ParseError::NoQuestions.into())
}

pub fn segment_prompt(doc: &Document, outline: &QuestionOutline) -> String {
    let questions = outline
        .questions
        .iter()
        .enumerate()
        .map(|(i, q)| format!("{}. {q}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    render(
        prompts::SEGMENT,
        &[("questions", &questions), ("sentences", &numbered(doc, 0..doc.sentence_count()))],
    )
}

/// Draws `p` segmentation proposals in one request and keeps the distinct
/// parseable ones. With none left, the sentence-window baseline stands in
/// and `fallback` is set.
pub fn sample_candidates(
    gen: &dyn Generator,
    doc: &Document,
    outline: &QuestionOutline,
    p: usize,
    params: &SamplingParams,
    token_rule: TokenRule,
) -> Result<CandidateSet, PipelineError> {
    if p == 0 {
        return Err(PipelineError::Config("p must be at least 1".into()));
    }
    let sampling = params.with_n(p);
    let raw_outputs = generate_n(gen, &segment_prompt(doc, outline), &sampling)?;
    let mut candidates: Vec<Partition> = Vec::new();
    let mut unparsed = Vec::new();
    for (i, raw) in raw_outputs.iter().enumerate() {
        match parse_segmenter_output(raw, doc) {
            Ok(part) if !candidates.iter().any(|c| c.boundaries == part.boundaries) => candidates.push(part),
            Ok(_) => {}
            Err(_) => unparsed.push(i),
        }
    }
    let fallback = candidates.is_empty();
    if fallback {
        candidates.push(sentence_window(doc, FALLBACK_TARGET_LEN, token_rule));
    }
    Ok(CandidateSet { candidates, sampling, raw_outputs, unparsed, fallback })
}

/// Index of the highest score. A later entry must exceed the incumbent by
/// a relative [`TIE_TOLERANCE`], so near-ties go to the lowest index.
pub fn argmax_cs(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        let Some(v) = *s else { continue };
        match best {
            None => best = Some((i, v)),
            Some((_, b)) if v > b + TIE_TOLERANCE * b.abs().max(1.0) => best = Some((i, v)),
            _ => {}
        }
    }
    best.map(|(i, _)| i)
}

pub struct Selection {
    pub selected_index: usize,
    pub scores: Vec<Option<ScoreBreakdown>>,
    pub excluded: Vec<Exclusion>,
}

/// Scores every candidate and picks the best. Candidates that fail to score
/// are excluded with the reason recorded.
pub fn select_best(
    candidates: &[Partition],
    scorer: &dyn TokenScorer,
    embedder: &dyn Embedder,
    lambda: f64,
    alpha: f64,
) -> Result<Selection, PipelineError> {
    if candidates.is_empty() {
        return Err(PipelineError::Config("no candidates to select from".into()));
    }
    let results: Vec<Result<ScoreBreakdown, MetricError>> = candidates
        .par_iter()
        .map(|c| chunk_score(c, scorer, embedder, lambda, alpha))
        .collect();
    let mut scores = Vec::with_capacity(results.len());
    let mut excluded = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(b) => scores.push(Some(b)),
            Err(MetricError::InvalidInput(m)) if m.contains("lambda") || m.contains("alpha") => {
                return Err(PipelineError::Config(m));
            }
            Err(e) => {
                excluded.push(Exclusion { index, reason: e.to_string() });
                scores.push(None);
            }
        }
    }
    let cs: Vec<Option<f64>> = scores.iter().map(|s| s.as_ref().map(|b| b.phi_cs)).collect();
    match argmax_cs(&cs) {
        Some(selected_index) => Ok(Selection { selected_index, scores, excluded }),
        None => Err(PipelineError::NoScorableCandidate(
            excluded.iter().map(|e| format!("#{}: {}", e.index, e.reason)).collect::<Vec<_>>().join("; "),
        )),
    }
}

/// Sentence range shown to the reviewer. The whole document when it fits
/// in `budget` tokens, otherwise a window grown outward from the chunk
/// alternately left and right while it fits. The chunk itself is always
/// included.
pub fn review_window(doc: &Document, chunk: &Chunk, budget: usize, rule: TokenRule) -> (usize, usize) {
    let cost = |i: usize| count_tokens(&doc.sentences[i].content, rule);
    let (mut lo, mut hi) = (chunk.start_sentence, chunk.end_sentence);
    let mut used: usize = (lo..hi).map(cost).sum();
    let n = doc.sentence_count();
    let (mut left_open, mut right_open) = (true, true);
    while left_open || right_open {
        if left_open {
            if lo > 0 && used + cost(lo - 1) <= budget {
                lo -= 1;
                used += cost(lo);
            } else {
                left_open = false;
            }
        }
        if right_open {
            if hi < n && used + cost(hi) <= budget {
                used += cost(hi);
                hi += 1;
            } else {
                right_open = false;
            }
        }
    }
    (lo, hi)
}

pub fn review_prompt(doc: &Document, chunk: &Chunk, window: (usize, usize)) -> String {
    render(
        prompts::REVIEW,
        &[
            ("start", &chunk.start_sentence.to_string()),
            ("end", &chunk.end_sentence.to_string()),
            ("chunk", chunk.text.trim_end()),
            ("document", &numbered(doc, window.0..window.1)),
        ],
    )
}

/// Asks the reviewer what the chunk is missing. An unparseable reply is
/// retried once. Returns the report and every raw reply.
pub fn review_integrity(
    gen: &dyn Generator,
    chunk_index: usize,
    chunk: &Chunk,
    doc: &Document,
    params: &SamplingParams,
    budget: usize,
    rule: TokenRule,
) -> Result<(ReviewReport, Vec<String>), PipelineError> {
    let prompt = review_prompt(doc, chunk, review_window(doc, chunk, budget, rule));
    let mut raws = Vec::new();
    let mut last_err = None;
    for _ in 0..2 {
        let raw = generate_n(gen, &prompt, &single(params))?.remove(0);
        let parsed = parse_review(&raw, doc.sentence_count());
        raws.push(raw);
        match parsed {
            Ok((needs_completion, missing)) => {
                return Ok((ReviewReport { chunk_index, missing, needs_completion }, raws));
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("loop ran").into())
}

/// ROUGE-L recall of `description` within `evidence`: the share of the
/// description's tokens found, in order, in the evidence.
fn containment(description: &str, evidence: &str) -> f64 {
    rouge_l(evidence, description).recall
}

/// Keeps the items whose content is found in the document outside the
/// chunk. Items without a span are grounded to the best-matching outside
/// sentence.
pub fn verify_missing_items(
    report: &ReviewReport,
    doc: &Document,
    chunk: &Chunk,
) -> (Vec<MissingItem>, Vec<DroppedItem>) {
    let mut kept: Vec<MissingItem> = Vec::new();
    let mut dropped = Vec::new();
    let mut drop = |item: &MissingItem, reason: &str| {
        dropped.push(DroppedItem {
            chunk_index: report.chunk_index,
            description: item.description.clone(),
            reason: reason.to_string(),
        })
    };
    for item in &report.missing {
        let span = match item.evidence_span {
            Some((a, b)) => {
                if !chunk.disjoint_from(a, b) {
                    drop(item, "span not disjoint from chunk");
                    continue;
                }
                (containment(&item.description, &doc.span_text(a, b)) >= GROUNDING_RECALL).then_some((a, b))
            }
            None => (0..doc.sentence_count())
                .filter(|&i| !chunk.contains_sentence(i))
                .map(|i| (i, containment(&item.description, &doc.sentences[i].content)))
                .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
                    Some((_, br)) if br >= r => best,
                    _ => Some((i, r)),
                })
                .filter(|&(_, r)| r >= GROUNDING_RECALL)
                .map(|(i, _)| (i, i + 1)),
        };
        match span {
            Some(s) if kept.iter().any(|k| k.evidence_span == Some(s)) => drop(item, "duplicate evidence"),
            Some(s) => kept.push(MissingItem {
                description: item.description.clone(),
                evidence_span: Some(s),
                grounded: true,
            }),
            None => drop(item, "ungrounded"),
        }
    }
    (kept, dropped)
}

/// Share of the chunk's sentences preserved in `rewritten`. Sentences with
/// no tokens count as preserved.
pub fn coverage_ratio(doc: &Document, chunk: &Chunk, rewritten: &str) -> f64 {
    let rewritten_tokens = normalized_tokens(rewritten);
    let sentences = &doc.sentences[chunk.start_sentence..chunk.end_sentence];
    let kept = sentences
        .iter()
        .filter(|s| {
            let reference = normalized_tokens(&s.content);
            reference.is_empty()
                || crate::metrics::rouge::rouge_l_tokens(&rewritten_tokens, &reference).recall >= SENTENCE_RECALL
        })
        .count();
    kept as f64 / sentences.len() as f64
}

fn evidence_lines(doc: &Document, verified: &[MissingItem]) -> Vec<String> {
    verified
        .iter()
        .filter_map(|m| m.evidence_span)
        .map(|(a, b)| doc.span_text(a, b).replace(['\n', '\r'], " "))
        .collect()
}

/// Rewrites the chunk with the verified evidence. A rewrite that fails the
/// coverage gate is regenerated once; after that the chunk text is kept and
/// the evidence sentences are appended verbatim.
pub fn complete_chunk(
    gen: &dyn Generator,
    chunk: &Chunk,
    doc: &Document,
    verified: &[MissingItem],
    params: &SamplingParams,
) -> Result<(CompletedChunk, Vec<String>), PipelineError> {
    let evidence = evidence_lines(doc, verified);
    if evidence.is_empty() {
        return Err(PipelineError::Config("completion needs at least one grounded item".into()));
    }
    let prompt = render(
        prompts::COMPLETE,
        &[("chunk", chunk.text.trim_end()), ("evidence", &evidence.join("\n"))],
    );
    let done = |text: String, coverage_ratio: f64, fallback_concat: bool| CompletedChunk {
        original: chunk.clone(),
        supplements: verified.to_vec(),
        rewritten_text: text,
        coverage_ratio,
        fallback_concat,
    };
    let mut raws = Vec::new();
    for _ in 0..2 {
        let raw = generate_n(gen, &prompt, &single(params))?.remove(0);
        let text = raw.trim().to_string();
        raws.push(raw);
        let ratio = coverage_ratio(doc, chunk, &text);
        if ratio >= COVERAGE_GATE {
            return Ok((done(text, ratio, false), raws));
        }
    }
    let text = format!("{} {}", chunk.text.trim_end(), evidence.join(" "));
    let ratio = coverage_ratio(doc, chunk, &text);
    Ok((done(text, ratio, true), raws))
}
