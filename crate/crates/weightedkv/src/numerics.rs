//! Minimal dense linear algebra for the cache experiments.
//!
//! Everything is 64-bit: the ideal-merge identity is verified to 1e-10
//! relative error, which leaves no headroom for f32 accumulation. Matrices
//! are row-major with one key/value per row, matching the append-per-step
//! access pattern of a KV cache.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    /// Softmax over an empty logit vector.
    EmptyLogits,
    /// An input contained NaN or infinity.
    NonFinite { context: &'static str },
    DimensionMismatch { expected: usize, got: usize },
    /// Spectrum normalization of an all-zero matrix.
    ZeroSpectrum,
    /// Jacobi sweeps did not reach the off-diagonal tolerance.
    NoConvergence { sweeps: usize },
    EmptyMatrix,
    ZeroVector,
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyLogits => write!(f, "empty logits"),
            Self::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Self::ZeroSpectrum => write!(f, "zero spectrum"),
            Self::NoConvergence { sweeps } => {
                write!(f, "singular value iteration did not converge in {sweeps} sweeps")
            }
            Self::EmptyMatrix => write!(f, "matrix has no rows"),
            Self::ZeroVector => write!(f, "zero vector where a nonzero norm is required"),
        }
    }
}

impl std::error::Error for NumericsError {}

/// Row-major dense matrix of `f64`.
///
/// The column count is fixed at construction; the row count may be zero so
/// the type can serve as a growable container for cache keys and values.
/// All stored elements are finite; constructors and mutators reject NaN/Inf.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Empty matrix with a fixed positive column count.
    pub fn with_cols(cols: usize) -> Self {
        assert!(cols > 0, "column count must be positive");
        Self { rows: 0, cols, data: Vec::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(cols > 0, "column count must be positive");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let first = rows.first().ok_or(NumericsError::EmptyMatrix)?;
        let cols = first.len();
        if cols == 0 {
            return Err(NumericsError::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut m = Mat::with_cols(cols);
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<(), NumericsError> {
        if row.len() != self.cols {
            return Err(NumericsError::DimensionMismatch { expected: self.cols, got: row.len() });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite { context: "matrix row" });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) -> Result<(), NumericsError> {
        if row.len() != self.cols {
            return Err(NumericsError::DimensionMismatch { expected: self.cols, got: row.len() });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite { context: "matrix row" });
        }
        self.data[i * self.cols..(i + 1) * self.cols].copy_from_slice(row);
        Ok(())
    }

    /// Adds `scale * src` into row `i`.
    pub fn add_scaled_row(&mut self, i: usize, src: &[f64], scale: f64) -> Result<(), NumericsError> {
        if src.len() != self.cols {
            return Err(NumericsError::DimensionMismatch { expected: self.cols, got: src.len() });
        }
        let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
        for (dst, s) in row.iter_mut().zip(src) {
            *dst += scale * s;
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite { context: "scaled row update" });
        }
        Ok(())
    }

    pub fn remove_row(&mut self, i: usize) {
        assert!(i < self.rows, "row index {i} out of bounds ({} rows)", self.rows);
        self.data.drain(i * self.cols..(i + 1) * self.cols);
        self.rows -= 1;
    }

    pub fn transpose(&self) -> Mat {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Mat { rows: self.cols, cols: self.rows, data }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Matrix-vector product `M x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if x.len() != self.cols {
            return Err(NumericsError::DimensionMismatch { expected: self.cols, got: x.len() });
        }
        Ok(self.row_iter().map(|row| dot(row, x)).collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot product length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "distance length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(NumericsError::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Numerically stable softmax with max subtraction.
///
/// Output entries sum to 1 within 1e-12 and the result is invariant under
/// adding a constant to every logit. Entries whose logit sits further than
/// ~745 below the maximum underflow to exactly 0.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::EmptyLogits);
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite { context: "softmax logits" });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Scaled dot-product scores `(q . k_i) / sqrt(d)` for every key row.
///
/// `d` is the scaling dimension; in normal use it equals the query length,
/// but it is taken explicitly so callers control the temperature.
pub fn scaled_scores(query: &[f64], keys: &Mat, d: usize) -> Result<Vec<f64>, NumericsError> {
    if query.len() != keys.cols() {
        return Err(NumericsError::DimensionMismatch { expected: keys.cols(), got: query.len() });
    }
    if d == 0 {
        return Err(NumericsError::DimensionMismatch { expected: 1, got: 0 });
    }
    let inv = 1.0 / (d as f64).sqrt();
    Ok(keys.row_iter().map(|k| dot(query, k) * inv).collect())
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Singular values of `m` in non-increasing order.
///
/// One-sided Jacobi: rotate column pairs of the tall orientation of `m`
/// until all pairs are orthogonal to relative tolerance 1e-12, then read
/// the singular values off as column norms. At most 100 sweeps; exceeding
/// them is reported as non-convergence rather than returning a bad result.
pub fn singular_values(m: &Mat) -> Result<Vec<f64>, NumericsError> {
    if m.is_empty() {
        return Err(NumericsError::EmptyMatrix);
    }
    // Work on columns of the orientation with rows >= cols.
    let work = if m.rows() >= m.cols() { m.clone() } else { m.transpose() };
    let (rows, cols) = (work.rows(), work.cols());
    let mut col: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..rows).map(|r| work.row(r)[c]).collect())
        .collect();

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut orthogonal = true;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let alpha = dot(&col[i], &col[i]);
                let beta = dot(&col[j], &col[j]);
                let gamma = dot(&col[i], &col[j]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                orthogonal = false;
                // Rotation angle that zeroes the (i, j) Gram entry.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = col.split_at_mut(j);
                for (vi, vj) in left[i].iter_mut().zip(right[0].iter_mut()) {
                    let (x, y) = (*vi, *vj);
                    *vi = c * x - s * y;
                    *vj = s * x + c * y;
                }
            }
        }
        if orthogonal {
            let mut sigma: Vec<f64> = col.iter().map(|c| l2_norm(c)).collect();
            sigma.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
            return Ok(sigma);
        }
    }
    Err(NumericsError::NoConvergence { sweeps: JACOBI_MAX_SWEEPS })
}

/// Singular values divided by the largest; the first entry is 1.
pub fn normalized_spectrum(m: &Mat) -> Result<Vec<f64>, NumericsError> {
    let sigma = singular_values(m)?;
    let top = sigma[0];
    if top == 0.0 {
        return Err(NumericsError::ZeroSpectrum);
    }
    Ok(sigma.into_iter().map(|s| s / top).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let w = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for x in &w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let w = softmax(&[1000.0, 1000.0]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_hand_value() {
        // e^0 / (e^0 + 3) = 1/4, e^{ln 3} / (1 + 3) = 3/4
        let w = softmax(&[0.0, 3.0_f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15);
        assert!((w[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_empty_and_non_finite() {
        assert_eq!(softmax(&[]), Err(NumericsError::EmptyLogits));
        assert!(matches!(softmax(&[1.0, f64::NAN]), Err(NumericsError::NonFinite { .. })));
    }

    #[test]
    fn scaled_scores_orthonormal_keys() {
        let keys = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = scaled_scores(&[1.0, 0.0], &keys, 2).unwrap();
        assert!((s[0] - 1.0 / 2.0_f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn scaled_scores_zero_query() {
        let keys = Mat::from_rows(&[vec![3.0, -2.0], vec![5.5, 0.1]]).unwrap();
        assert_eq!(scaled_scores(&[0.0, 0.0], &keys, 2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn scaled_scores_explicit_dimension() {
        // (2 + 1) / sqrt(4) = 1.5
        let keys = Mat::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(scaled_scores(&[2.0, 1.0], &keys, 4).unwrap(), vec![1.5]);
    }

    #[test]
    fn scaled_scores_dimension_mismatch() {
        let keys = Mat::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            scaled_scores(&[1.0], &keys, 1),
            Err(NumericsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn singular_values_diagonal() {
        let m = Mat::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = singular_values(&m).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-12);
        assert!((s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_values_zero_matrix() {
        let m = Mat::zeros(2, 2);
        assert_eq!(singular_values(&m).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn singular_values_golden_ratio_shear() {
        // [[1,1],[0,1]] has singular values phi and 1/phi.
        let m = Mat::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let s = singular_values(&m).unwrap();
        let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
        assert!((s[0] - phi).abs() < 1e-8, "got {}", s[0]);
        assert!((s[1] - 1.0 / phi).abs() < 1e-8, "got {}", s[1]);
    }

    #[test]
    fn normalized_spectrum_diagonal() {
        let m = Mat::from_rows(&[
            vec![4.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let s = normalized_spectrum(&m).unwrap();
        assert_eq!(s, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn normalized_spectrum_rank_one() {
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0, 2.0];
        let rows: Vec<Vec<f64>> = u.iter().map(|a| v.iter().map(|b| a * b).collect()).collect();
        let s = normalized_spectrum(&Mat::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(s[0], 1.0);
        assert!(s[1].abs() < 1e-10);
        assert!(s[2].abs() < 1e-10);
    }

    #[test]
    fn normalized_spectrum_zero_matrix_errors() {
        assert_eq!(normalized_spectrum(&Mat::zeros(3, 3)), Err(NumericsError::ZeroSpectrum));
    }

    #[test]
    fn mat_rejects_bad_rows() {
        let mut m = Mat::with_cols(2);
        assert!(m.push_row(&[1.0]).is_err());
        assert!(m.push_row(&[1.0, f64::INFINITY]).is_err());
        assert!(m.push_row(&[1.0, 2.0]).is_ok());
        assert_eq!(m.rows(), 1);
    }

    #[test]
    fn cosine_similarity_basics() {
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap()).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0], &[1.0]), Err(NumericsError::ZeroVector));
    }
}
