use rayon::join;
use serde::{Deserialize, Serialize};

use super::dispersion::phi_sd;
use super::independence::{boundary_lis, mean_li};
use crate::clients::{embed_batch, Embedder, TokenScorer};
use crate::corpus::Partition;
use crate::error::MetricError;

pub const DEFAULT_LAMBDA: f64 = 0.3;
pub const DEFAULT_ALPHA: f64 = 1e-3;

/// Full audit trail of one ChunkScore evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub phi_li: f64,
    pub phi_sd: f64,
    pub phi_cs: f64,
    pub lambda: f64,
    pub alpha: f64,
    /// Clamped LI per internal boundary, `K − 1` entries.
    pub per_boundary_li: Vec<f64>,
    /// Eigenvalues of `Σ + αI`, ascending, `K` entries.
    pub eigenvalues: Vec<f64>,
    pub k: usize,
    /// Unclamped `PPL(c_i | c_{i−1}) / PPL(c_i)` ratios.
    #[serde(default)]
    pub raw_li_ratios: Vec<f64>,
    /// Min-max normalized score within a candidate set. Diagnostic only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_cs: Option<f64>,
}

/// `λ·Φ_LI + (1−λ)·Φ_SD`.
pub fn combine(lambda: f64, phi_li: f64, phi_sd: f64) -> f64 {
    lambda * phi_li + (1.0 - lambda) * phi_sd
}

impl ScoreBreakdown {
    pub fn recombined(&self, lambda: f64) -> f64 {
        combine(lambda, self.phi_li, self.phi_sd)
    }

    /// Checks the internal consistency of the breakdown.
    pub fn check_invariants(&self) -> Result<(), String> {
        if (self.phi_cs - self.recombined(self.lambda)).abs() > 1e-12 {
            return Err(format!("phi_cs {} does not recombine", self.phi_cs));
        }
        if self.eigenvalues.len() != self.k || self.per_boundary_li.len() + 1 != self.k {
            return Err("length mismatch with k".into());
        }
        let logsum = self.eigenvalues.iter().map(|l| l.ln()).sum::<f64>() / self.k as f64;
        if (self.phi_sd - logsum).abs() > 1e-8 {
            return Err(format!("phi_sd {} vs eigen form {logsum}", self.phi_sd));
        }
        if self.eigenvalues.iter().any(|l| *l < self.alpha * (1.0 - 1e-9)) {
            return Err("eigenvalue below alpha".into());
        }
        if self.eigenvalues.windows(2).any(|w| w[0] > w[1]) {
            return Err("eigenvalues not ascending".into());
        }
        if !(0.0..=1.0).contains(&self.phi_li)
            || self.per_boundary_li.iter().any(|v| !(0.0..=1.0).contains(v))
        {
            return Err("LI outside [0, 1]".into());
        }
        Ok(())
    }
}

pub fn validate_weights(lambda: f64, alpha: f64) -> Result<(), MetricError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MetricError::InvalidInput(format!("lambda must be in [0, 1], got {lambda}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(MetricError::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

/// Scores a partition. The LI boundaries and the chunk embeddings are
/// fetched concurrently.
pub fn chunk_score(
    partition: &Partition,
    scorer: &dyn TokenScorer,
    embedder: &dyn Embedder,
    lambda: f64,
    alpha: f64,
) -> Result<ScoreBreakdown, MetricError> {
    validate_weights(lambda, alpha)?;
    let texts = partition.chunk_texts();
    let (lis, z) = join(
        || boundary_lis(scorer, partition),
        || embed_batch(embedder, &texts),
    );
    let lis = lis?;
    let dispersion = phi_sd(&z?, alpha)?;
    let per_boundary_li: Vec<f64> = lis.iter().map(|b| b.li).collect();
    let phi_li = mean_li(&per_boundary_li);
    Ok(ScoreBreakdown {
        phi_li,
        phi_sd: dispersion.phi_sd,
        phi_cs: combine(lambda, phi_li, dispersion.phi_sd),
        lambda,
        alpha,
        per_boundary_li,
        eigenvalues: dispersion.eigenvalues,
        k: partition.k(),
        raw_li_ratios: lis.iter().map(|b| b.ratio).collect(),
        normalized_cs: None,
    })
}

/// Fills `normalized_cs` with per-dimension min-max normalization of Φ_LI and
/// Φ_SD across the set, recombined with each breakdown's λ. A dimension with
/// no spread maps to 0.5.
pub fn annotate_normalized(breakdowns: &mut [&mut ScoreBreakdown]) {
    let range = |f: &dyn Fn(&ScoreBreakdown) -> f64| {
        breakdowns.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| {
            (lo.min(f(b)), hi.max(f(b)))
        })
    };
    let (li_lo, li_hi) = range(&|b| b.phi_li);
    let (sd_lo, sd_hi) = range(&|b| b.phi_sd);
    let norm = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    for b in breakdowns.iter_mut() {
        let li = norm(b.phi_li, li_lo, li_hi);
        let sd = norm(b.phi_sd, sd_lo, sd_hi);
        b.normalized_cs = Some(combine(b.lambda, li, sd));
    }
}
