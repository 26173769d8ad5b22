//! Value-merging mathematics.
//!
//! When a key is evicted, the two affected value rows can be replaced by a
//! single row. [`ideal_merge`] computes the unique replacement that leaves
//! the attention output unchanged for one specific query; it is exact but
//! needs the whole cache. [`approx_merge_weights`] keeps only the two-term
//! softmax over the merged pair, which is the convex combination the
//! WeightedKV policy applies. [`attention_perturbation`] measures how much
//! a single merge disturbs later attention distributions.

use std::fmt;

use crate::numerics::{self, NumericsError};

#[derive(Debug, Clone, PartialEq)]
pub enum MergeError {
    TooFewTokens { got: usize },
    LengthMismatch { expected: usize, got: usize },
    InvalidWeights { left: f64, right: f64 },
    SlotOutOfRange { slot: usize, len: usize },
    Numerics(NumericsError),
}

impl fmt::Display for MergeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TooFewTokens { got } => write!(f, "merging needs at least 2 tokens, got {got}"),
            Self::LengthMismatch { expected, got } => {
                write!(f, "length mismatch: expected {expected}, got {got}")
            }
            Self::InvalidWeights { left, right } => {
                write!(f, "invalid merge weights ({left}, {right})")
            }
            Self::SlotOutOfRange { slot, len } => {
                write!(f, "slot {slot} has no right neighbor in {len} slots")
            }
            Self::Numerics(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for MergeError {}

impl From<NumericsError> for MergeError {
    fn from(e: NumericsError) -> Self {
        Self::Numerics(e)
    }
}

/// Convex coefficients for merging a value row into its right neighbor.
///
/// Both entries are non-negative and sum to 1 within 1e-12.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeWeights {
    left: f64,
    right: f64,
}

impl MergeWeights {
    pub fn new(left: f64, right: f64) -> Result<Self, MergeError> {
        let valid = left >= 0.0 && right >= 0.0 && (left + right - 1.0).abs() <= 1e-12;
        if !valid {
            return Err(MergeError::InvalidWeights { left, right });
        }
        Ok(Self { left, right })
    }

    /// Normalizes a pair of non-negative scores into merge weights.
    ///
    /// A doubly-zero pair (neither token ever received attention) falls
    /// back to the unweighted mean rather than dividing 0 by 0.
    pub fn from_scores(left_score: f64, right_score: f64) -> Result<Self, MergeError> {
        if left_score < 0.0 || right_score < 0.0 {
            return Err(MergeError::InvalidWeights { left: left_score, right: right_score });
        }
        let total = left_score + right_score;
        if total == 0.0 {
            return Ok(Self { left: 0.5, right: 0.5 });
        }
        Ok(Self { left: left_score / total, right: right_score / total })
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }
}

/// Two-term softmax over the merged pair's scaled scores, computed
/// overflow-safely: `e^{q.k1/sqrt d} / (e^{q.k1/sqrt d} + e^{q.k2/sqrt d})`
/// and its complement.
pub fn approx_merge_weights(query: &[f64], k1: &[f64], k2: &[f64]) -> Result<MergeWeights, MergeError> {
    let d = query.len();
    if k1.len() != d {
        return Err(MergeError::LengthMismatch { expected: d, got: k1.len() });
    }
    if k2.len() != d {
        return Err(MergeError::LengthMismatch { expected: d, got: k2.len() });
    }
    let inv = 1.0 / (d as f64).sqrt();
    let l1 = numerics::dot(query, k1) * inv;
    let l2 = numerics::dot(query, k2) * inv;
    let m = l1.max(l2);
    let e1 = (l1 - m).exp();
    let e2 = (l2 - m).exp();
    Ok(MergeWeights { left: e1 / (e1 + e2), right: e2 / (e1 + e2) })
}

/// `w.left * v1 + w.right * v2`; every coordinate of the result lies
/// between the corresponding coordinates of `v1` and `v2`.
pub fn convex_combine(w: &MergeWeights, v1: &[f64], v2: &[f64]) -> Result<Vec<f64>, MergeError> {
    if v1.len() != v2.len() {
        return Err(MergeError::LengthMismatch { expected: v1.len(), got: v2.len() });
    }
    Ok(v1.iter().zip(v2).map(|(a, b)| w.left * a + w.right * b).collect())
}

/// Exact substitution value for merging the first two tokens.
///
/// Returns the row that replaces (`values[0]`, `values[1]`) when `keys[0]`
/// is dropped and `keys[1]` kept, such that attention over the reduced
/// cache reproduces the original output for `query` — and for that query
/// only; the substitution is query-relative.
pub fn ideal_merge(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Result<Vec<f64>, MergeError> {
    ideal_merge_at(query, keys, values, 0)
}

/// [`ideal_merge`] generalized to an arbitrary adjacent pair: drops
/// `keys[slot]`, keeps `keys[slot + 1]`, and returns the replacement for
/// `values[slot + 1]`.
///
/// Derivation sketch: with `e_i = exp(q.k_i / sqrt d)` and `S = sum e_i`,
/// equating the outputs before and after the drop gives
/// `v~ = (1 - e_j/S) (r v_j + v_{j+1}) - r * sum_{i != j, j+1} (e_i/S) v_i`
/// where `r = e_j / e_{j+1}`. The `e_i/S` ratios are softmax probabilities
/// and computed as such; only `r` is a raw exponential ratio.
pub fn ideal_merge_at(
    query: &[f64],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    slot: usize,
) -> Result<Vec<f64>, MergeError> {
    let t = keys.len();
    if t < 2 {
        return Err(MergeError::TooFewTokens { got: t });
    }
    if values.len() != t {
        return Err(MergeError::LengthMismatch { expected: t, got: values.len() });
    }
    if slot + 1 >= t {
        return Err(MergeError::SlotOutOfRange { slot, len: t });
    }
    let d = query.len();
    for k in keys {
        if k.len() != d {
            return Err(MergeError::LengthMismatch { expected: d, got: k.len() });
        }
    }
    for v in values {
        if v.len() != d {
            return Err(MergeError::LengthMismatch { expected: d, got: v.len() });
        }
    }

    let inv = 1.0 / (d as f64).sqrt();
    let logits: Vec<f64> = keys.iter().map(|k| numerics::dot(query, k) * inv).collect();
    let probs = numerics::softmax(&logits)?;
    let ratio = (logits[slot] - logits[slot + 1]).exp();
    if !ratio.is_finite() {
        return Err(MergeError::Numerics(NumericsError::NonFinite {
            context: "ideal merge exponential ratio",
        }));
    }

    let mut merged = vec![0.0; d];
    // (1 - p_j) * (r * v_j + v_{j+1})
    let lead = 1.0 - probs[slot];
    for c in 0..d {
        merged[c] = lead * (ratio * values[slot][c] + values[slot + 1][c]);
    }
    // - r * sum over the untouched tokens of p_i * v_i
    for i in 0..t {
        if i == slot || i == slot + 1 {
            continue;
        }
        for c in 0..d {
            merged[c] -= ratio * probs[i] * values[i][c];
        }
    }
    if merged.iter().any(|x| !x.is_finite()) {
        return Err(MergeError::Numerics(NumericsError::NonFinite { context: "ideal merge result" }));
    }
    Ok(merged)
}

/// Cosine similarity between an uncompressed attention distribution and
/// one computed after a single merge.
///
/// The distributions have different lengths, so `full_weights[merged_slot]`
/// is folded into its right neighbor and the slot deleted before
/// comparing — the alignment that matches merging into the right neighbor.
pub fn attention_perturbation(
    full_weights: &[f64],
    merged_weights: &[f64],
    merged_slot: usize,
) -> Result<f64, MergeError> {
    if merged_weights.len() + 1 != full_weights.len() {
        return Err(MergeError::LengthMismatch {
            expected: full_weights.len().saturating_sub(1),
            got: merged_weights.len(),
        });
    }
    if merged_slot + 1 >= full_weights.len() {
        return Err(MergeError::SlotOutOfRange { slot: merged_slot, len: full_weights.len() });
    }
    let mut folded = full_weights.to_vec();
    folded[merged_slot + 1] += folded[merged_slot];
    folded.remove(merged_slot);
    Ok(numerics::cosine_similarity(&folded, merged_weights)?)
}
