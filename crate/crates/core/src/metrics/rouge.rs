use serde::{Deserialize, Serialize};

use crate::text::normalized_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Length of the longest common subsequence, two-row DP.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeL {
    if candidate.is_empty() || reference.is_empty() {
        return RougeL { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let lcs = lcs_len(candidate, reference) as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeL { precision, recall, f1 }
}

/// ROUGE-L over normalized whitespace tokens, CJK split per character.
/// Empty token lists score zero.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeL {
    rouge_l_tokens(&normalized_tokens(candidate), &normalized_tokens(reference))
}
