//! Single-head autoregressive attention over a mutable KV cache.
//!
//! A [`CacheState`] holds the retained key/value rows plus the per-slot
//! bookkeeping every compression policy reads: accumulated attention mass,
//! observation counts, and the original token position each slot stands
//! for. [`CacheState::attend`] owns the bookkeeping update so every policy
//! sees identical accounting.

use std::fmt;

use crate::numerics::{self, Mat, NumericsError};

#[derive(Debug, Clone, PartialEq)]
pub enum AttentionError {
    Numerics(NumericsError),
    EmptyCache,
    DimensionMismatch { expected: usize, got: usize },
    /// Appends must carry strictly increasing token positions.
    NonIncreasingPosition { last: usize, got: usize },
    LengthMismatch { expected: usize, got: usize },
    InvalidScores(&'static str),
}

impl fmt::Display for AttentionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Numerics(e) => write!(f, "{e}"),
            Self::EmptyCache => write!(f, "attention over an empty cache"),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Self::NonIncreasingPosition { last, got } => {
                write!(f, "position {got} does not exceed last retained position {last}")
            }
            Self::LengthMismatch { expected, got } => {
                write!(f, "length mismatch: expected {expected}, got {got}")
            }
            Self::InvalidScores(msg) => write!(f, "invalid score state: {msg}"),
        }
    }
}

impl std::error::Error for AttentionError {}

impl From<NumericsError> for AttentionError {
    fn from(e: NumericsError) -> Self {
        Self::Numerics(e)
    }
}

/// One decode step's attention result.
///
/// `weights` covers every cache slot present at the step (the new token
/// included) and sums to 1 within 1e-12.
#[derive(Debug, Clone)]
pub struct AttentionStep {
    /// 0-based decode step, counted per cache.
    pub step_index: usize,
    pub query: Vec<f64>,
    pub new_key: Vec<f64>,
    pub new_value: Vec<f64>,
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
}

/// Per-head cache of retained keys and values with policy bookkeeping.
///
/// Invariants held between public operations:
/// - `keys`, `values`, `acc_scores`, `counts`, `positions` all have one
///   entry per retained slot;
/// - `positions` is strictly increasing;
/// - `0 <= acc_scores[i] <= counts[i]`, so per-slot averages are in [0, 1].
///
/// Counts for a freshly appended slot are 0 until the next `attend`; every
/// policy runs after `attend`, so policies always observe counts >= 1.
#[derive(Debug, Clone)]
pub struct CacheState {
    keys: Mat,
    values: Mat,
    acc_scores: Vec<f64>,
    counts: Vec<f64>,
    positions: Vec<usize>,
    steps: usize,
}

impl CacheState {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "head dimension must be positive");
        Self {
            keys: Mat::with_cols(dim),
            values: Mat::with_cols(dim),
            acc_scores: Vec::new(),
            counts: Vec::new(),
            positions: Vec::new(),
            steps: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.keys.cols()
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Number of `attend` calls so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn keys(&self) -> &Mat {
        &self.keys
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn acc_scores(&self) -> &[f64] {
        &self.acc_scores
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Historical average attention score per slot (`a / n`); slots that
    /// were never attended report 0.
    pub fn avg_scores(&self) -> Vec<f64> {
        self.acc_scores
            .iter()
            .zip(&self.counts)
            .map(|(a, n)| if *n > 0.0 { a / n } else { 0.0 })
            .collect()
    }

    /// Appends a new token's key and value.
    ///
    /// Bookkeeping gains a trailing zero entry; the `+weight` / `+1`
    /// update happens in the following `attend`.
    pub fn append(&mut self, key: &[f64], value: &[f64], position: usize) -> Result<(), AttentionError> {
        let d = self.dim();
        if key.len() != d || value.len() != d {
            return Err(AttentionError::DimensionMismatch {
                expected: d,
                got: if key.len() != d { key.len() } else { value.len() },
            });
        }
        if let Some(&last) = self.positions.last() {
            if position <= last {
                return Err(AttentionError::NonIncreasingPosition { last, got: position });
            }
        }
        self.keys.push_row(key)?;
        self.values.push_row(value)?;
        self.acc_scores.push(0.0);
        self.counts.push(0.0);
        self.positions.push(position);
        Ok(())
    }

    /// Runs one attention step against the current cache and accumulates
    /// the resulting weights into the per-slot bookkeeping.
    pub fn attend(&mut self, query: &[f64]) -> Result<AttentionStep, AttentionError> {
        if self.is_empty() {
            return Err(AttentionError::EmptyCache);
        }
        let d = self.dim();
        if query.len() != d {
            return Err(AttentionError::DimensionMismatch { expected: d, got: query.len() });
        }
        let scores = numerics::scaled_scores(query, &self.keys, d)?;
        let weights = numerics::softmax(&scores)?;

        let mut output = vec![0.0; d];
        for (w, row) in weights.iter().zip(self.values.row_iter()) {
            for (o, v) in output.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        for ((a, n), w) in self.acc_scores.iter_mut().zip(&mut self.counts).zip(&weights) {
            *a += w;
            *n += 1.0;
        }

        let step_index = self.steps;
        self.steps += 1;
        let last = self.len() - 1;
        Ok(AttentionStep {
            step_index,
            query: query.to_vec(),
            new_key: self.keys.row(last).to_vec(),
            new_value: self.values.row(last).to_vec(),
            weights,
            output,
        })
    }

    /// Overwrites the accumulated-score state, validating the invariants.
    ///
    /// Exists for schedule replays that drive a policy from a prescribed
    /// average-attention table rather than from live softmax outputs.
    pub fn set_scores(&mut self, acc: &[f64], counts: &[f64]) -> Result<(), AttentionError> {
        if acc.len() != self.len() {
            return Err(AttentionError::LengthMismatch { expected: self.len(), got: acc.len() });
        }
        if counts.len() != self.len() {
            return Err(AttentionError::LengthMismatch { expected: self.len(), got: counts.len() });
        }
        for (a, n) in acc.iter().zip(counts) {
            if !a.is_finite() || !n.is_finite() {
                return Err(AttentionError::InvalidScores("non-finite entry"));
            }
            if *n < 1.0 {
                return Err(AttentionError::InvalidScores("count below 1"));
            }
            if *a < 0.0 || *a > *n + 1e-9 {
                return Err(AttentionError::InvalidScores("accumulated score outside [0, count]"));
            }
        }
        self.acc_scores = acc.to_vec();
        self.counts = counts.to_vec();
        Ok(())
    }

    /// Drops slot `slot` from all parallel arrays.
    pub fn remove_slot(&mut self, slot: usize) {
        assert!(slot < self.len(), "slot {slot} out of bounds ({} slots)", self.len());
        self.keys.remove_row(slot);
        self.values.remove_row(slot);
        self.acc_scores.remove(slot);
        self.counts.remove(slot);
        self.positions.remove(slot);
    }

    pub fn replace_value_row(&mut self, slot: usize, row: &[f64]) -> Result<(), AttentionError> {
        assert!(slot < self.len(), "slot {slot} out of bounds ({} slots)", self.len());
        self.values.set_row(slot, row)?;
        Ok(())
    }

    pub fn add_scaled_value(&mut self, slot: usize, src: &[f64], scale: f64) -> Result<(), AttentionError> {
        assert!(slot < self.len(), "slot {slot} out of bounds ({} slots)", self.len());
        self.values.add_scaled_row(slot, src, scale)?;
        Ok(())
    }
}

/// Causal full attention over complete query/key/value lists: output at
/// step `t` attends to tokens `0..=t`. Ground truth for divergence
/// metrics; no cache, no compression.
pub fn full_attention_reference(
    queries: &[Vec<f64>],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, AttentionError> {
    if queries.len() != keys.len() {
        return Err(AttentionError::LengthMismatch { expected: queries.len(), got: keys.len() });
    }
    if queries.len() != values.len() {
        return Err(AttentionError::LengthMismatch { expected: queries.len(), got: values.len() });
    }
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let d = queries[0].len();
    let mut key_mat = Mat::with_cols(d);
    let mut value_rows: Vec<&[f64]> = Vec::with_capacity(values.len());
    let mut outputs = Vec::with_capacity(queries.len());
    for ((q, k), v) in queries.iter().zip(keys).zip(values) {
        key_mat.push_row(k)?;
        value_rows.push(v);
        let weights = numerics::softmax(&numerics::scaled_scores(q, &key_mat, d)?)?;
        let mut out = vec![0.0; d];
        for (w, row) in weights.iter().zip(&value_rows) {
            for (o, x) in out.iter_mut().zip(*row) {
                *o += w * x;
            }
        }
        outputs.push(out);
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cache_with(rows: &[(&[f64], &[f64])]) -> CacheState {
        let mut c = CacheState::new(rows[0].0.len());
        for (i, (k, v)) in rows.iter().enumerate() {
            c.append(k, v, i).unwrap();
        }
        c
    }

    #[test]
    fn append_first_token() {
        let mut c = CacheState::new(2);
        c.append(&[1.0, 0.0], &[2.0, 3.0], 0).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.acc_scores(), &[0.0]);
        assert_eq!(c.counts(), &[0.0]);
        assert_eq!(c.positions(), &[0]);
    }

    #[test]
    fn append_keeps_positions_increasing() {
        let mut c = cache_with(&[(&[1.0], &[1.0]), (&[2.0], &[2.0])]);
        c.append(&[3.0], &[3.0], 2).unwrap();
        assert_eq!(c.positions(), &[0, 1, 2]);
        assert!(matches!(
            c.append(&[4.0], &[4.0], 2),
            Err(AttentionError::NonIncreasingPosition { last: 2, got: 2 })
        ));
    }

    #[test]
    fn append_rejects_dimension_mismatch() {
        let mut c = CacheState::new(3);
        assert!(matches!(
            c.append(&[1.0, 2.0], &[1.0, 2.0, 3.0], 0),
            Err(AttentionError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn attend_singleton_cache() {
        let mut c = cache_with(&[(&[0.3, -1.0], &[5.0, 7.0])]);
        let step = c.attend(&[2.0, 2.0]).unwrap();
        assert_eq!(step.weights, vec![1.0]);
        assert_eq!(step.output, vec![5.0, 7.0]);
        assert_eq!(step.step_index, 0);
        assert_eq!(c.acc_scores(), &[1.0]);
        assert_eq!(c.counts(), &[1.0]);
    }

    #[test]
    fn attend_symmetric_keys_average_values() {
        let mut c = cache_with(&[(&[1.0, 1.0], &[4.0, 0.0]), (&[1.0, 1.0], &[0.0, 2.0])]);
        let step = c.attend(&[0.7, -0.2]).unwrap();
        assert!((step.output[0] - 2.0).abs() < 1e-12);
        assert!((step.output[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attend_empty_cache_errors() {
        let mut c = CacheState::new(2);
        assert!(matches!(c.attend(&[1.0, 1.0]), Err(AttentionError::EmptyCache)));
    }

    #[test]
    fn attend_accumulates_bookkeeping() {
        let mut c = cache_with(&[(&[1.0], &[1.0]), (&[0.5], &[2.0])]);
        let s0 = c.attend(&[1.0]).unwrap();
        let s1 = c.attend(&[-1.0]).unwrap();
        assert_eq!(c.counts(), &[2.0, 2.0]);
        for i in 0..2 {
            assert!((c.acc_scores()[i] - (s0.weights[i] + s1.weights[i])).abs() < 1e-15);
        }
        assert_eq!(s1.step_index, 1);
    }

    #[test]
    fn full_attention_single_step_matches_attend() {
        let q = vec![vec![0.4, -0.3]];
        let k = vec![vec![1.0, 2.0]];
        let v = vec![vec![-1.0, 3.0]];
        let reference = full_attention_reference(&q, &k, &v).unwrap();
        let mut c = CacheState::new(2);
        c.append(&k[0], &v[0], 0).unwrap();
        let step = c.attend(&q[0]).unwrap();
        assert_eq!(reference[0], step.output);
    }

    #[test]
    fn full_attention_constant_values() {
        let t = 6;
        let queries: Vec<Vec<f64>> = (0..t).map(|i| vec![i as f64, 1.0]).collect();
        let keys: Vec<Vec<f64>> = (0..t).map(|i| vec![1.0, -(i as f64)]).collect();
        let values: Vec<Vec<f64>> = (0..t).map(|_| vec![2.5, -0.5]).collect();
        for out in full_attention_reference(&queries, &keys, &values).unwrap() {
            assert!((out[0] - 2.5).abs() < 1e-12);
            assert!((out[1] + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn full_attention_length_mismatch() {
        assert!(matches!(
            full_attention_reference(&[vec![1.0]], &[], &[]),
            Err(AttentionError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn set_scores_validates() {
        let mut c = cache_with(&[(&[1.0], &[1.0]), (&[2.0], &[2.0])]);
        assert!(c.set_scores(&[0.9, 0.1], &[1.0, 1.0]).is_ok());
        assert_eq!(c.avg_scores(), vec![0.9, 0.1]);
        assert!(c.set_scores(&[1.5, 0.1], &[1.0, 1.0]).is_err());
        assert!(c.set_scores(&[0.5], &[1.0]).is_err());
        assert!(c.set_scores(&[0.5, 0.1], &[0.0, 1.0]).is_err());
    }
}
