//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qchunker_core::metrics::EmbeddingMatrix;
use qchunker_core::Document;

/// `k` random unit columns of width `d`.
pub fn unit_matrix(d: usize, k: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    EmbeddingMatrix::from_columns(&cols).expect("finite columns")
}

const WORDS: &[&str] = &[
    "river", "stone", "battery", "cell", "mineral", "cave", "charge", "powder", "light", "metal",
    "forest", "signal", "layer", "engine", "salt", "cloud", "market", "harbor", "grain", "field",
];

/// Space-separated random words.
pub fn words(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// A document of `sentences` sentences of 6 to 16 words each.
pub fn document(sentences: usize, seed: u64) -> Document {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text: Vec<String> = (0..sentences)
        .map(|i| {
            let n = rng.random_range(6..=16);
            let mut s = words(n, seed ^ (i as u64 + 1));
            s.push('.');
            s
        })
        .collect();
    Document::new(format!("bench-{seed}"), text.join(" ")).expect("non-empty text")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_seeded() {
        assert_eq!(document(20, 3), document(20, 3));
        assert_eq!(document(20, 3).sentence_count(), 20);
        assert!(unit_matrix(16, 4, 1).is_unit_norm(1e-12));
    }
}
