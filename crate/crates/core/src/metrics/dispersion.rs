//! Semantic dispersion: the normalized log-determinant of the regularized,
//! feature-centered Gram matrix of chunk embeddings.
//!
//! With `Z` the `d × K` matrix of chunk embeddings and
//! `J = I_d − (1/d)·11ᵀ`, the Gram matrix is `Σ = Zᵀ J Z` and
//!
//! ```text
//! Φ_SD = (1/K) · log det(Σ + αI_K) = (1/K) · Σ_i log λ_i(Σ + αI_K)
//! ```
//!
//! The log-determinant is always taken through the symmetric
//! eigendecomposition, which stays accurate when `Σ` is close to singular
//! (near-duplicate chunks) and yields the eigenvalues for the audit trail.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::MetricError;

/// Column-stacked embeddings, `d` rows by `K` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: DMatrix<f64>,
}

impl EmbeddingMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self, MetricError> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(MetricError::InvalidInput("empty embedding matrix".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(MetricError::NonFinite("embedding matrix entry".into()));
        }
        Ok(EmbeddingMatrix { data })
    }

    /// Builds from equally sized columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self, MetricError> {
        let d = columns.first().map(Vec::len).unwrap_or(0);
        if columns.iter().any(|c| c.len() != d) {
            return Err(MetricError::InvalidInput("columns differ in length".into()));
        }
        let flat: Vec<f64> = columns.iter().flatten().copied().collect();
        Self::new(DMatrix::from_column_slice(d, columns.len(), &flat))
    }

    pub fn d(&self) -> usize {
        self.data.nrows()
    }

    pub fn k(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.data.as_slice()[i * d..(i + 1) * d]
    }

    pub fn column_norm(&self, i: usize) -> f64 {
        self.column(i).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_unit_norm(&self, tol: f64) -> bool {
        (0..self.k()).all(|i| (self.column_norm(i) - 1.0).abs() <= tol)
    }

    /// Same embeddings with columns reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let cols: Vec<Vec<f64>> = order.iter().map(|&i| self.column(i).to_vec()).collect();
        EmbeddingMatrix::from_columns(&cols).expect("permutation of a valid matrix")
    }
}

/// `J_d = I_d − (1/d)·11ᵀ`.
pub fn centering_matrix(d: usize) -> DMatrix<f64> {
    let off = 1.0 / d as f64;
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 - off } else { -off })
}

/// `Σ = Zᵀ J_d Z`, computed as `Zᵀ (J_d Z)` by centering each column over its
/// features, then symmetrized.
pub fn centered_gram(z: &EmbeddingMatrix) -> Result<DMatrix<f64>, MetricError> {
    if z.d() < 2 {
        return Err(MetricError::InvalidInput(format!(
            "embedding dimension must be at least 2, got {}",
            z.d()
        )));
    }
    let mut centered = z.data().clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let gram = z.data().transpose() * centered;
    let sym = (&gram + gram.transpose()) * 0.5;
    if sym.iter().any(|x| !x.is_finite()) {
        return Err(MetricError::NonFinite("Gram matrix".into()));
    }
    Ok(sym)
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>, MetricError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(MetricError::NonFinite("matrix passed to eigendecomposition".into()));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| MetricError::Degenerate("eigendecomposition did not converge".into()))?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    Ok(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispersion {
    pub phi_sd: f64,
    /// Eigenvalues of `Σ + αI`, ascending.
    pub eigenvalues: Vec<f64>,
}

pub fn phi_sd(z: &EmbeddingMatrix, alpha: f64) -> Result<Dispersion, MetricError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(MetricError::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    let mut sigma = centered_gram(z)?;
    let k = sigma.nrows();
    for i in 0..k {
        sigma[(i, i)] += alpha;
    }
    let eigenvalues = symmetric_eigenvalues(&sigma)?;
    if let Some(bad) = eigenvalues.iter().find(|l| **l <= 0.0) {
        return Err(MetricError::Degenerate(format!(
            "regularized Gram matrix has non-positive eigenvalue {bad}"
        )));
    }
    let phi_sd = eigenvalues.iter().map(|l| l.ln()).sum::<f64>() / k as f64;
    Ok(Dispersion { phi_sd, eigenvalues })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s2() -> f64 {
        2f64.sqrt()
    }
    fn s6() -> f64 {
        6f64.sqrt()
    }

    fn orthonormal_pair() -> EmbeddingMatrix {
        EmbeddingMatrix::from_columns(&[
            vec![1.0 / s2(), -1.0 / s2(), 0.0],
            vec![1.0 / s6(), 1.0 / s6(), -2.0 / s6()],
        ])
        .unwrap()
    }

    #[test]
    fn gram_of_centered_orthonormal_columns_is_identity() {
        let g = centered_gram(&orthonormal_pair()).unwrap();
        assert!((g - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn identical_columns_collapse_rank() {
        let z = EmbeddingMatrix::from_columns(&[vec![0.6, 0.8, 0.0], vec![0.6, 0.8, 0.0]]).unwrap();
        let g = centered_gram(&z).unwrap();
        let s = g[(0, 0)];
        assert!(s >= 0.0);
        for v in g.iter() {
            assert!((v - s).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_sd_hand_values() {
        let d = phi_sd(&orthonormal_pair(), 1e-3).unwrap();
        assert!((d.phi_sd - 1.001f64.ln()).abs() < 1e-12);
        assert!((d.phi_sd - 9.995e-4).abs() < 1e-6);

        let c = vec![1.0 / s2(), -1.0 / s2(), 0.0];
        let dup = EmbeddingMatrix::from_columns(&[c.clone(), c]).unwrap();
        let d = phi_sd(&dup, 1e-3).unwrap();
        assert!((d.eigenvalues[0] - 0.001).abs() < 1e-12);
        assert!((d.eigenvalues[1] - 2.001).abs() < 1e-12);
        let want = (2.001f64.ln() + 0.001f64.ln()) / 2.0;
        assert!((d.phi_sd - want).abs() < 1e-12);
        assert!((d.phi_sd + 3.107).abs() < 1e-3);
    }

    #[test]
    fn single_column_scalar_case() {
        let col = vec![0.6, 0.0, 0.8, 0.0];
        let m = col.iter().sum::<f64>() / 4.0;
        let z = EmbeddingMatrix::from_columns(&[col]).unwrap();
        let d = phi_sd(&z, 1e-3).unwrap();
        assert!((d.phi_sd - (1.0 - 4.0 * m * m + 1e-3).ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let z = EmbeddingMatrix::from_columns(&[vec![1.0]]).unwrap();
        assert!(centered_gram(&z).is_err());
        assert!(phi_sd(&orthonormal_pair(), 0.0).is_err());
        assert!(EmbeddingMatrix::from_columns(&[vec![f64::NAN, 1.0]]).is_err());
    }

    #[test]
    fn centering_matrix_is_symmetric_idempotent() {
        for d in [2, 8, 64] {
            let j = centering_matrix(d);
            assert!((&j * &j - &j).amax() < 1e-12);
            assert_eq!((&j - j.transpose()).amax(), 0.0);
        }
    }
}
