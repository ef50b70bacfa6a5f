//! Tokenization shared by the metrics, the chunkers and the stub models.
//!
//! Tokens are whitespace-delimited words. Runs of CJK ideographs (and kana,
//! hangul, CJK punctuation excluded) are split into one token per character
//! so that unsegmented Chinese or Japanese text still yields usable units.

use serde::{Deserialize, Serialize};

/// How to count tokens for length targeting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenRule {
    /// Whitespace-delimited words only.
    Whitespace,
    /// Whitespace words, with each CJK character counted separately.
    #[default]
    CjkChar,
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF     // hiragana, katakana
        | 0x3400..=0x4DBF   // ext A
        | 0x4E00..=0x9FFF   // unified ideographs
        | 0xAC00..=0xD7AF   // hangul syllables
        | 0xF900..=0xFAFF
        | 0x20000..=0x2FA1F)
}

/// Raw token slices under `rule`, in order. No normalization.
pub fn raw_tokens(text: &str, rule: TokenRule) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if rule == TokenRule::Whitespace || !word.chars().any(is_cjk) {
            out.push(word);
            continue;
        }
        let mut run_start: Option<usize> = None;
        for (i, c) in word.char_indices() {
            if is_cjk(c) {
                if let Some(s) = run_start.take() {
                    out.push(&word[s..i]);
                }
                out.push(&word[i..i + c.len_utf8()]);
            } else if run_start.is_none() {
                run_start = Some(i);
            }
        }
        if let Some(s) = run_start {
            out.push(&word[s..]);
        }
    }
    out
}

pub fn count_tokens(text: &str, rule: TokenRule) -> usize {
    raw_tokens(text, rule).len()
}

/// Lowercased tokens with leading and trailing punctuation stripped; tokens
/// that are pure punctuation are dropped. Used wherever tokens are compared.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    raw_tokens(text, TokenRule::CjkChar)
        .into_iter()
        .filter_map(|t| {
            let trimmed = t.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}
