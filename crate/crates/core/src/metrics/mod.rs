//! ChunkScore and the supporting evaluation metrics.

pub mod correlation;
pub mod dispersion;
pub mod independence;
pub mod rouge;
pub mod score;

pub use correlation::{lambda_sweep, pearson, sweep_argmax, Grid, SweepRow};
pub use dispersion::{centered_gram, centering_matrix, phi_sd, Dispersion, EmbeddingMatrix};
pub use independence::{
    conditional_perplexity, logical_independence, perplexity, phi_li, ppl_from_logprobs,
};
pub use rouge::{rouge_l, RougeL};
pub use score::{chunk_score, combine, ScoreBreakdown, DEFAULT_ALPHA, DEFAULT_LAMBDA};
