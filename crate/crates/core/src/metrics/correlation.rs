//! Pearson correlation and the λ calibration sweep.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::score::combine;
use crate::error::MetricError;

/// Sample Pearson correlation, clamped to `[−1, 1]`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::InvalidInput(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(MetricError::InvalidInput("need at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite("correlation input".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Rounding leaves tiny residuals on constant input; treat variance at
    // the level of accumulated rounding error as zero.
    let floor = |m: f64, vals: &[f64]| {
        let scale = vals.iter().fold(m.abs(), |a, v| a.max(v.abs()));
        (scale * f64::EPSILON * 4.0).powi(2) * n
    };
    if sxx <= floor(mx, xs) || syy <= floor(my, ys) {
        return Err(MetricError::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Inclusive grid `start:end:step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Grid {
    pub fn new(start: f64, end: f64, step: f64) -> Result<Self, MetricError> {
        let g = Grid { start, end, step };
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || start > end {
            return Err(MetricError::InvalidInput(format!("grid {g} must lie within [0, 1]")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(MetricError::InvalidInput(format!("grid step must be positive: {g}")));
        }
        Ok(g)
    }

    /// Grid points computed as `start + i·step` (no accumulation) and rounded
    /// to 12 decimals so 0.3 prints as 0.3.
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| {
                let v = self.start + i as f64 * self.step;
                (v * 1e12).round() / 1e12
            })
            .collect()
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.end, self.step)
    }
}

impl FromStr for Grid {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || MetricError::InvalidInput(format!("grid must be start:end:step, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        Grid::new(nums[0], nums[1], nums[2])
    }
}

/// One sweep row; `r` is `None` where the correlation is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub r: Option<f64>,
}

/// For each λ on the grid, recombines Φ_CS per scheme from `(Φ_LI, Φ_SD)`
/// and correlates it with the downstream scores.
pub fn lambda_sweep(
    schemes: &[(f64, f64)],
    downstream: &[f64],
    grid: Grid,
) -> Result<Vec<SweepRow>, MetricError> {
    if schemes.len() != downstream.len() {
        return Err(MetricError::InvalidInput(format!(
            "{} schemes but {} downstream scores",
            schemes.len(),
            downstream.len()
        )));
    }
    if schemes.len() < 3 {
        return Err(MetricError::InvalidInput("sweep needs at least three schemes".into()));
    }
    Ok(grid
        .points()
        .into_iter()
        .map(|lambda| {
            let cs: Vec<f64> = schemes.iter().map(|&(li, sd)| combine(lambda, li, sd)).collect();
            SweepRow { lambda, r: pearson(&cs, downstream).ok() }
        })
        .collect())
}

/// Index of the row with the largest defined `r`; ties go to the lowest λ.
pub fn sweep_argmax(rows: &[SweepRow]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in rows.iter().enumerate() {
        if let Some(r) = row.r {
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
    }
    best.map(|(i, _)| i)
}
