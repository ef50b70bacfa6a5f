//! Recovery of structured data from free-form agent replies.

use serde::Deserialize;

use crate::corpus::{validate_partition, Document, Partition};
use crate::error::ParseError;

use super::MissingItem;

/// Strips list markers (`1.`, `2)`, `-`, `*`) from a line.
fn strip_marker(line: &str) -> &str {
    let t = line.trim();
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim();
        }
    }
    t.strip_prefix("- ")
        .or_else(|| t.strip_prefix("* "))
        .map_or(t, str::trim)
}

/// One question per line, list markers removed, exact duplicates dropped.
/// Lines that are not questions are ignored.
pub fn parse_outline(raw: &str) -> Result<Vec<String>, ParseError> {
    let mut out: Vec<String> = Vec::new();
    for line in raw.lines() {
        let q = strip_marker(line);
        if (q.ends_with('?') || q.ends_with('？')) && q.chars().count() > 1 && !out.iter().any(|o| o == q) {
            out.push(q.to_string());
        }
    }
    if out.is_empty() {
        return Err(ParseError::NoQuestions);
    }
    Ok(out)
}

/// Integers in `s`; a number preceded by `-` is kept as negative.
fn integers(s: &str) -> Vec<i64> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let neg = start > 0 && bytes[start - 1] == b'-';
            if let Ok(v) = s[start..i].parse::<i64>() {
                out.push(if neg { -v } else { v });
            }
        } else {
            i += 1;
        }
    }
    out
}

/// Boundary indices as written in the reply, before repair.
fn raw_boundaries(raw: &str) -> Vec<i64> {
    let lower = raw.to_lowercase();
    if let Some(pos) = lower.find("boundaries") {
        let rest = &raw[pos + "boundaries".len()..];
        let list = match (rest.find('['), rest.find(']')) {
            (Some(a), Some(b)) if a < b => &rest[a + 1..b],
            _ => rest.lines().next().unwrap_or(""),
        };
        return integers(list);
    }
    raw.lines()
        .filter_map(|l| l.trim().trim_end_matches(',').parse::<i64>().ok())
        .collect()
}

/// Extracts a boundary list from a segmenter reply. Accepts
/// `boundaries: [a, b]` or one index per line. Indices are sorted,
/// deduplicated, and those outside `1..N` dropped. A reply that yields no
/// usable index is an error unless it says "no split".
pub fn parse_segmenter_output(raw: &str, doc: &Document) -> Result<Partition, ParseError> {
    let n = doc.sentence_count() as i64;
    let mut b: Vec<usize> = raw_boundaries(raw)
        .into_iter()
        .filter(|&v| v > 0 && v < n)
        .map(|v| v as usize)
        .collect();
    b.sort_unstable();
    b.dedup();
    if b.is_empty() && !raw.to_lowercase().contains("no split") {
        return Err(ParseError::NoBoundaries);
    }
    Ok(validate_partition(doc, &b).expect("repaired boundaries are valid"))
}

#[derive(Deserialize)]
struct RawReview {
    #[serde(default)]
    needs_completion: Option<bool>,
    #[serde(default)]
    missing: Vec<RawItem>,
}

#[derive(Deserialize)]
struct RawItem {
    #[serde(default)]
    description: String,
    #[serde(default)]
    evidence: Option<Vec<i64>>,
}

/// Parsed reviewer verdict: `(needs_completion, missing)`. Evidence spans
/// that are not a valid `[start, end)` range are discarded, leaving the item
/// to be grounded by content.
pub fn parse_review(raw: &str, sentence_count: usize) -> Result<(bool, Vec<MissingItem>), ParseError> {
    let t = raw.trim();
    if t.to_uppercase().starts_with("COMPLETE") {
        return Ok((false, Vec::new()));
    }
    let (open, close) = match (t.find('{'), t.rfind('}')) {
        (Some(a), Some(b)) if a < b => (a, b),
        _ => return Err(ParseError::Review(excerpt(t))),
    };
    let parsed: RawReview =
        serde_json::from_str(&t[open..=close]).map_err(|e| ParseError::Review(format!("{e}: {}", excerpt(t))))?;
    let missing: Vec<MissingItem> = parsed
        .missing
        .into_iter()
        .filter(|m| !m.description.trim().is_empty())
        .map(|m| {
            let span = match m.evidence.as_deref() {
                Some(&[a, b]) if 0 <= a && a < b && b <= sentence_count as i64 => Some((a as usize, b as usize)),
                _ => None,
            };
            MissingItem {
                description: m.description.trim().to_string(),
                evidence_span: span,
                grounded: false,
            }
        })
        .collect();
    let verdict = parsed.needs_completion.unwrap_or(!missing.is_empty());
    Ok((verdict && !missing.is_empty(), missing))
}

fn excerpt(s: &str) -> String {
    let mut e: String = s.chars().take(80).collect();
    if s.chars().count() > 80 {
        e.push_str("...");
    }
    e
}
