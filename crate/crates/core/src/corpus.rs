//! Documents, sentence segmentation, and partitions of a document into chunks.
//!
//! A [`Partition`] is expressed as sentence-index boundaries. Boundary `b`
//! means "a new chunk starts at sentence `b`". Chunk byte ranges run from the
//! start of their first sentence to the start of the next chunk, so the
//! whitespace between sentences belongs to the preceding chunk and the chunk
//! texts concatenate back to the document byte-for-byte.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CorpusError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    /// Byte offset into the document text.
    pub start: usize,
    /// Exclusive byte offset.
    pub end: usize,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Builds a document and segments it. Fails when the text holds no
    /// sentence at all (empty or whitespace-only).
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, CorpusError> {
        let id = id.into();
        let text = text.into();
        let sentences = split_sentences(&text);
        if sentences.is_empty() {
            return Err(CorpusError::Line {
                line: 0,
                message: format!("document {id:?} has empty text"),
            });
        }
        Ok(Document { id, text, sentences })
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    /// Byte range covered by the sentence range `[start, end)` including the
    /// trailing separator, per the chunk attribution rule.
    pub fn span_bytes(&self, start: usize, end: usize) -> (usize, usize) {
        let lo = if start == 0 { 0 } else { self.sentences[start].start };
        let hi = if end >= self.sentences.len() {
            self.text.len()
        } else {
            self.sentences[end].start
        };
        (lo, hi)
    }

    /// Sentence contents of `[start, end)` joined by single spaces.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        self.sentences[start..end]
            .iter()
            .map(|s| s.content.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub start_sentence: usize,
    pub end_sentence: usize,
    pub text: String,
}

impl Chunk {
    pub fn contains_sentence(&self, idx: usize) -> bool {
        (self.start_sentence..self.end_sentence).contains(&idx)
    }

    /// True when `[start, end)` shares no sentence with this chunk.
    pub fn disjoint_from(&self, start: usize, end: usize) -> bool {
        end <= self.start_sentence || start >= self.end_sentence
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub doc_id: String,
    pub boundaries: Vec<usize>,
    pub chunks: Vec<Chunk>,
}

impl Partition {
    /// Number of chunks, K.
    pub fn k(&self) -> usize {
        self.chunks.len()
    }

    pub fn chunk_texts(&self) -> Vec<&str> {
        self.chunks.iter().map(|c| c.text.as_str()).collect()
    }
}

fn is_ascii_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_wide_terminal(c: char) -> bool {
    matches!(c, '。' | '！' | '？')
}

/// Rule-based sentence segmentation.
///
/// `.`, `!` and `?` end a sentence when followed by whitespace or the end of
/// the text. The full-width terminators `。！？` end a sentence unconditionally,
/// since CJK text does not put spaces between sentences. There is no
/// abbreviation list.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut iter = text.char_indices().peekable();

    let push = |s: usize, e: usize, out: &mut Vec<Sentence>| {
        out.push(Sentence {
            index: out.len(),
            start: s,
            end: e,
            content: text[s..e].to_string(),
        });
    };

    while let Some((i, c)) = iter.next() {
        if start.is_none() {
            if c.is_whitespace() {
                continue;
            }
            start = Some(i);
        }
        let end = i + c.len_utf8();
        let ends_here = if is_wide_terminal(c) {
            true
        } else if is_ascii_terminal(c) {
            match iter.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            }
        } else {
            false
        };
        if ends_here {
            push(start.take().unwrap(), end, &mut out);
        }
    }
    if let Some(s) = start {
        let e = s + text[s..].trim_end().len();
        push(s, e, &mut out);
    }
    out
}

#[derive(Deserialize)]
struct CorpusLine {
    id: Option<String>,
    text: Option<String>,
    #[serde(default)]
    meta: Option<serde_json::Value>,
}

/// Loads a corpus JSONL file: one `{"id", "text", "meta"?}` object per line.
/// Blank lines are skipped; errors name the 1-based line number.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_jsonl(&raw)
}

pub fn parse_jsonl(raw: &str) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in raw.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(line).map_err(|e| CorpusError::Line {
            line: line_no,
            message: format!("malformed JSON: {e}"),
        })?;
        let context = parsed
            .meta
            .as_ref()
            .map(|m| format!(" (meta: {m})"))
            .unwrap_or_default();
        let id = parsed.id.ok_or_else(|| CorpusError::Line {
            line: line_no,
            message: format!("missing string field \"id\"{context}"),
        })?;
        let text = parsed.text.ok_or_else(|| CorpusError::Line {
            line: line_no,
            message: format!("missing string field \"text\" for id {id:?}{context}"),
        })?;
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id });
        }
        let doc = Document::new(id.clone(), text).map_err(|_| CorpusError::Line {
            line: line_no,
            message: format!("empty text for id {id:?}{context}"),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Checks `boundaries` against the document and derives the chunks.
pub fn validate_partition(doc: &Document, boundaries: &[usize]) -> Result<Partition, CorpusError> {
    let n = doc.sentence_count();
    for (position, &value) in boundaries.iter().enumerate() {
        if value == 0 || value >= n {
            return Err(CorpusError::OutOfRange {
                position,
                value,
                sentence_count: n,
            });
        }
        if position > 0 && value <= boundaries[position - 1] {
            return Err(CorpusError::NonIncreasing { position, value });
        }
    }
    let mut edges = Vec::with_capacity(boundaries.len() + 2);
    edges.push(0);
    edges.extend_from_slice(boundaries);
    edges.push(n);
    let chunks = edges
        .windows(2)
        .map(|w| {
            let (lo, hi) = doc.span_bytes(w[0], w[1]);
            Chunk {
                start_sentence: w[0],
                end_sentence: w[1],
                text: doc.text[lo..hi].to_string(),
            }
        })
        .collect();
    Ok(Partition {
        doc_id: doc.id.clone(),
        boundaries: boundaries.to_vec(),
        chunks,
    })
}
