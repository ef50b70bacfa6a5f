//! The chunk-file format: one JSON object per line, one line per document.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use qchunker_core::clients::Embedder;
use qchunker_core::{validate_partition, ClientError, Document, Partition, ScoreBreakdown};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub text: String,
    pub start_sentence: usize,
    pub end_sentence: usize,
    /// Precomputed embedding, used instead of the backend's embedder when
    /// every chunk of the line carries one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub doc_id: String,
    pub strategy: String,
    pub boundaries: Vec<usize>,
    pub chunks: Vec<ChunkEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreBreakdown>,
}

impl ChunkRecord {
    pub fn from_partition(strategy: &str, p: &Partition) -> Self {
        ChunkRecord {
            doc_id: p.doc_id.clone(),
            strategy: strategy.to_string(),
            boundaries: p.boundaries.clone(),
            chunks: p
                .chunks
                .iter()
                .map(|c| ChunkEntry {
                    text: c.text.clone(),
                    start_sentence: c.start_sentence,
                    end_sentence: c.end_sentence,
                    embedding: None,
                })
                .collect(),
            result_path: None,
            score: None,
        }
    }

    /// Rebuilds the document from the chunk texts (chunks carry their
    /// separators, so concatenation is the original text) and checks that
    /// the stored boundaries describe those chunks.
    pub fn resolve(&self) -> Result<(Document, Partition), String> {
        if self.chunks.is_empty() {
            return Err("no chunks".into());
        }
        let text: String = self.chunks.iter().map(|c| c.text.as_str()).collect();
        let doc = Document::new(self.doc_id.clone(), text).map_err(|e| e.to_string())?;
        let p = validate_partition(&doc, &self.boundaries).map_err(|e| e.to_string())?;
        let matches = p.k() == self.chunks.len()
            && p.chunks.iter().zip(&self.chunks).all(|(a, b)| {
                a.text == b.text && a.start_sentence == b.start_sentence && a.end_sentence == b.end_sentence
            });
        if !matches {
            return Err("boundaries do not match the chunk texts".into());
        }
        Ok((doc, p))
    }

    /// Embeddings stored on the line, if every chunk has one.
    pub fn precomputed(&self) -> Result<Option<Precomputed>, String> {
        let n = self.chunks.iter().filter(|c| c.embedding.is_some()).count();
        if n == 0 {
            return Ok(None);
        }
        if n != self.chunks.len() {
            return Err("embedding present on some chunks but not all".into());
        }
        Ok(Some(Precomputed {
            texts: self.chunks.iter().map(|c| c.text.clone()).collect(),
            vectors: self.chunks.iter().map(|c| c.embedding.clone().unwrap()).collect(),
        }))
    }
}

/// Serves the stored vectors for exactly the chunk texts of one line.
pub struct Precomputed {
    texts: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl Embedder for Precomputed {
    fn dimension(&self) -> usize {
        self.vectors[0].len()
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ClientError> {
        if texts.len() == self.texts.len() && texts.iter().zip(&self.texts).all(|(a, b)| *a == b) {
            Ok(self.vectors.clone())
        } else {
            Err(ClientError::Config("precomputed embeddings cover only the stored chunks".into()))
        }
    }
}

/// Non-empty lines of a JSONL file with their 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

pub fn read_records(path: &Path) -> Result<Vec<ChunkRecord>, CliError> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| {
            serde_json::from_str(&l)
                .map_err(|e| CliError::Input(format!("{}: line {n}: malformed chunk line: {e}", path.display())))
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(CliError::input)?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(bytes)?;
    Ok(())
}
