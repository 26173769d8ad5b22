//! Cache compression policies.
//!
//! Seven policies share one contract: after every attention step, a policy
//! may compress the cache by at most one slot so the retained count never
//! exceeds the budget `m`.
//!
//! - `WeightedKv` drops the key of the slot with the lowest historical
//!   average attention score and merges its value into the right neighbor
//!   by an average-score-weighted convex combination.
//! - `EvictionVariant` selects identically but deletes the value instead of
//!   merging — the ablation that isolates what merging contributes.
//! - `FullKv` never compresses and refuses to run over budget.
//! - `StreamingLlm` keeps fixed sink and recent regions, evicting the
//!   oldest token outside the sink.
//! - `H2o` evicts the lowest cumulative attention score.
//! - `Tova` evicts the lowest weight from the immediately preceding step.
//! - `Cam` evicts like `H2o` but, with probability given by the slot's
//!   average score, spreads the evicted value over the following window.
//!   Implemented from a two-sentence published description as a comparison
//!   baseline; not a faithful reimplementation of the original method.
//!
//! Selection everywhere excludes the first `sink_count` slots and the last
//! `recent_count + 1` slots (the `+1` keeps the newest token out of range),
//! and ties break toward the smallest slot index so replays are total-ordered.

use std::fmt;
use std::str::FromStr;

use crate::attention::{AttentionError, CacheState};
use crate::merge::{convex_combine, MergeError, MergeWeights};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    FullKv,
    StreamingLlm,
    H2o,
    Tova,
    Cam,
    WeightedKv,
    EvictionVariant,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::FullKv,
        PolicyKind::StreamingLlm,
        PolicyKind::H2o,
        PolicyKind::Tova,
        PolicyKind::Cam,
        PolicyKind::WeightedKv,
        PolicyKind::EvictionVariant,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::FullKv => "fullkv",
            Self::StreamingLlm => "streamingllm",
            Self::H2o => "h2o",
            Self::Tova => "tova",
            Self::Cam => "cam",
            Self::WeightedKv => "weightedkv",
            Self::EvictionVariant => "eviction",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fullkv" | "full" => Ok(Self::FullKv),
            "streamingllm" | "streaming" => Ok(Self::StreamingLlm),
            "h2o" => Ok(Self::H2o),
            "tova" => Ok(Self::Tova),
            "cam" => Ok(Self::Cam),
            "weightedkv" => Ok(Self::WeightedKv),
            "eviction" | "eviction-variant" => Ok(Self::EvictionVariant),
            other => Err(format!("unknown policy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyError {
    InvalidConfig(String),
    /// FullKv saw a cache above budget; it has no compression rule.
    FullKvOverBudget { len: usize, budget: usize },
    /// More than one slot over budget; the per-step contract was skipped.
    CacheOverflow { len: usize, budget: usize },
    NoCompressibleSlot,
    WeightsLength { expected: usize, got: usize },
    Attention(AttentionError),
    Merge(MergeError),
}

impl fmt::Display for PolicyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidConfig(msg) => write!(f, "invalid policy config: {msg}"),
            Self::FullKvOverBudget { len, budget } => {
                write!(f, "FullKV cannot enforce budget ({len} slots, budget {budget})")
            }
            Self::CacheOverflow { len, budget } => {
                write!(f, "cache has {len} slots, more than budget {budget} + 1")
            }
            Self::NoCompressibleSlot => write!(f, "no compressible slot outside protected regions"),
            Self::WeightsLength { expected, got } => {
                write!(f, "last-step weights length {got}, cache has {expected} slots")
            }
            Self::Attention(e) => write!(f, "{e}"),
            Self::Merge(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for PolicyError {}

impl From<AttentionError> for PolicyError {
    fn from(e: AttentionError) -> Self {
        Self::Attention(e)
    }
}

impl From<MergeError> for PolicyError {
    fn from(e: MergeError) -> Self {
        Self::Merge(e)
    }
}

/// Budget and protected-region settings shared by every policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Maximum retained slots `m`.
    pub budget: usize,
    /// Leading tokens never compressed (attention sinks).
    pub sink_count: usize,
    /// Trailing tokens never selected for compression.
    pub recent_count: usize,
    /// Seed for the probabilistic merge draw (`Cam` only).
    pub rng_seed: u64,
    /// Window width `n` of the 1/n value spreading (`Cam` only).
    pub cam_window: usize,
}

impl PolicyConfig {
    /// Config with the conventional 4 sink tokens and no recent window.
    pub fn new(kind: PolicyKind, budget: usize) -> Self {
        Self { kind, budget, sink_count: 4, recent_count: 0, rng_seed: 0, cam_window: 4 }
    }

    pub fn with_sinks(mut self, sink_count: usize) -> Self {
        self.sink_count = sink_count;
        self
    }

    pub fn with_recent(mut self, recent_count: usize) -> Self {
        self.recent_count = recent_count;
        self
    }

    pub fn with_seed(mut self, rng_seed: u64) -> Self {
        self.rng_seed = rng_seed;
        self
    }

    pub fn with_cam_window(mut self, cam_window: usize) -> Self {
        self.cam_window = cam_window;
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.budget < 2 {
            return Err(PolicyError::InvalidConfig(format!("budget {} < 2", self.budget)));
        }
        if self.sink_count + self.recent_count + 1 > self.budget {
            return Err(PolicyError::InvalidConfig(format!(
                "sinks {} + recent {} + 1 exceed budget {}",
                self.sink_count, self.recent_count, self.budget
            )));
        }
        if self.cam_window == 0 {
            return Err(PolicyError::InvalidConfig("cam_window must be positive".into()));
        }
        Ok(())
    }

    /// Slot indices eligible for compression in a cache of `len` slots:
    /// past the sinks and before the recent window plus the newest token.
    pub fn compressible_slots(&self, len: usize) -> std::ops::Range<usize> {
        let lo = self.sink_count.min(len);
        let hi = len.saturating_sub(self.recent_count + 1);
        lo..hi.max(lo)
    }
}

/// Record of one compression decision, for audit logs and replays.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionEvent {
    /// 0-based decode step at which the compression ran.
    pub step: usize,
    pub evicted_slot: usize,
    /// Original token position the evicted slot represented.
    pub evicted_position: usize,
    /// Slot that absorbed the value, always `evicted_slot + 1` when present.
    pub merged_into: Option<usize>,
    pub merged_position: Option<usize>,
    pub weights: Option<MergeWeights>,
}

fn argmin_in_range(scores: &[f64], range: std::ops::Range<usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in range {
        let s = scores[i];
        match best {
            // strict < keeps the earliest index on ties
            Some((_, bs)) if s < bs => best = Some((i, s)),
            None => best = Some((i, s)),
            _ => {}
        }
    }
    best.map(|(i, _)| i)
}

/// Slot the WeightedKV policy will compress: the minimum historical
/// average attention score among compressible slots, earliest on ties.
pub fn weightedkv_select(cache: &CacheState, config: &PolicyConfig) -> Result<usize, PolicyError> {
    let range = config.compressible_slots(cache.len());
    if range.is_empty() {
        return Err(PolicyError::NoCompressibleSlot);
    }
    let avg = cache.avg_scores();
    Ok(argmin_in_range(&avg, range).expect("non-empty range"))
}

fn event_for(cache: &CacheState, slot: usize, merged: Option<MergeWeights>) -> CompressionEvent {
    CompressionEvent {
        step: cache.steps().saturating_sub(1),
        evicted_slot: slot,
        evicted_position: cache.positions()[slot],
        merged_into: merged.as_ref().map(|_| slot + 1),
        merged_position: merged.as_ref().map(|_| cache.positions()[slot + 1]),
        weights: merged,
    }
}

/// Merges value row `slot` into row `slot + 1` weighted by their average
/// attention scores, then drops slot `slot`'s key and bookkeeping. The
/// surviving slot keeps its own accumulated score, count, and position.
pub fn weightedkv_compress(
    cache: &mut CacheState,
    slot: usize,
) -> Result<CompressionEvent, PolicyError> {
    let avg = cache.avg_scores();
    let weights = MergeWeights::from_scores(avg[slot], avg[slot + 1])?;
    let merged = convex_combine(&weights, cache.values().row(slot), cache.values().row(slot + 1))?;
    let event = event_for(cache, slot, Some(weights));
    cache.replace_value_row(slot + 1, &merged)?;
    cache.remove_slot(slot);
    Ok(event)
}

/// Same selection as WeightedKV but deletes the value row outright;
/// the key handling is identical, so retained keys and positions match
/// WeightedKV exactly on the same trace.
pub fn eviction_variant_compress(
    cache: &mut CacheState,
    slot: usize,
) -> Result<CompressionEvent, PolicyError> {
    let event = event_for(cache, slot, None);
    cache.remove_slot(slot);
    Ok(event)
}

/// Evicts the oldest slot outside the sink region.
pub fn streamingllm_compress(
    cache: &mut CacheState,
    config: &PolicyConfig,
) -> Result<CompressionEvent, PolicyError> {
    let range = config.compressible_slots(cache.len());
    if range.is_empty() {
        return Err(PolicyError::NoCompressibleSlot);
    }
    let slot = range.start;
    let event = event_for(cache, slot, None);
    cache.remove_slot(slot);
    Ok(event)
}

/// Evicts the compressible slot with the lowest cumulative (not averaged)
/// attention score.
pub fn h2o_compress(
    cache: &mut CacheState,
    config: &PolicyConfig,
) -> Result<CompressionEvent, PolicyError> {
    let range = config.compressible_slots(cache.len());
    if range.is_empty() {
        return Err(PolicyError::NoCompressibleSlot);
    }
    let slot = argmin_in_range(cache.acc_scores(), range).expect("non-empty range");
    let event = event_for(cache, slot, None);
    cache.remove_slot(slot);
    Ok(event)
}

/// Evicts the compressible slot with the lowest weight in the immediately
/// preceding attention step.
pub fn tova_compress(
    cache: &mut CacheState,
    config: &PolicyConfig,
    last_step_weights: &[f64],
) -> Result<CompressionEvent, PolicyError> {
    if last_step_weights.len() != cache.len() {
        return Err(PolicyError::WeightsLength {
            expected: cache.len(),
            got: last_step_weights.len(),
        });
    }
    let range = config.compressible_slots(cache.len());
    if range.is_empty() {
        return Err(PolicyError::NoCompressibleSlot);
    }
    let slot = argmin_in_range(last_step_weights, range).expect("non-empty range");
    let event = event_for(cache, slot, None);
    cache.remove_slot(slot);
    Ok(event)
}

/// Selects like H2o, then with probability equal to the slot's average
/// attention score (clamped to [0, 1]) spreads the evicted value, scaled
/// by `1 / cam_window`, over the following `min(cam_window, remaining)`
/// value rows; otherwise the value is discarded. The key row always goes.
/// The draw `u` is in (0, 1] and merges when `u <= p`, so p = 0 never
/// merges and p = 1 always does.
pub fn cam_compress(
    cache: &mut CacheState,
    config: &PolicyConfig,
    rng: &mut SplitMix64,
) -> Result<CompressionEvent, PolicyError> {
    let range = config.compressible_slots(cache.len());
    if range.is_empty() {
        return Err(PolicyError::NoCompressibleSlot);
    }
    let slot = argmin_in_range(cache.acc_scores(), range).expect("non-empty range");
    let p = cache.avg_scores()[slot].clamp(0.0, 1.0);
    let merge = rng.next_unit() <= p;
    let event = if merge {
        let src = cache.values().row(slot).to_vec();
        let scale = 1.0 / config.cam_window as f64;
        let fan_out = config.cam_window.min(cache.len() - slot - 1);
        for target in (slot + 1)..(slot + 1 + fan_out) {
            cache.add_scaled_value(target, &src, scale)?;
        }
        CompressionEvent {
            step: cache.steps().saturating_sub(1),
            evicted_slot: slot,
            evicted_position: cache.positions()[slot],
            merged_into: Some(slot + 1),
            merged_position: Some(cache.positions()[slot + 1]),
            weights: None,
        }
    } else {
        event_for(cache, slot, None)
    };
    cache.remove_slot(slot);
    Ok(event)
}

/// A configured policy plus the per-run state it owns (the merge draw
/// generator for `Cam`). Drive one `Policy` per cache.
#[derive(Debug, Clone)]
pub struct Policy {
    config: PolicyConfig,
    rng: SplitMix64,
}

impl Policy {
    pub fn new(config: PolicyConfig) -> Result<Self, PolicyError> {
        config.validate()?;
        let rng = SplitMix64::new(config.rng_seed);
        Ok(Self { config, rng })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    /// Compresses at most one slot so the cache holds at most `budget`
    /// slots. Call after every `attend`; `last_step_weights` are that
    /// step's attention weights (consumed by `Tova` only).
    pub fn enforce_budget(
        &mut self,
        cache: &mut CacheState,
        last_step_weights: &[f64],
    ) -> Result<Option<CompressionEvent>, PolicyError> {
        let len = cache.len();
        if len <= self.config.budget {
            return Ok(None);
        }
        if len > self.config.budget + 1 {
            return Err(PolicyError::CacheOverflow { len, budget: self.config.budget });
        }
        let event = match self.config.kind {
            PolicyKind::FullKv => {
                return Err(PolicyError::FullKvOverBudget { len, budget: self.config.budget })
            }
            PolicyKind::WeightedKv => {
                let slot = weightedkv_select(cache, &self.config)?;
                weightedkv_compress(cache, slot)?
            }
            PolicyKind::EvictionVariant => {
                let slot = weightedkv_select(cache, &self.config)?;
                eviction_variant_compress(cache, slot)?
            }
            PolicyKind::StreamingLlm => streamingllm_compress(cache, &self.config)?,
            PolicyKind::H2o => h2o_compress(cache, &self.config)?,
            PolicyKind::Tova => tova_compress(cache, &self.config, last_step_weights)?,
            PolicyKind::Cam => cam_compress(cache, &self.config, &mut self.rng)?,
        };
        Ok(Some(event))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cache_of(n: usize, d: usize) -> CacheState {
        let mut c = CacheState::new(d);
        for i in 0..n {
            let k: Vec<f64> = (0..d).map(|j| (i * d + j) as f64 * 0.1).collect();
            let v: Vec<f64> = (0..d).map(|j| (i * d + j) as f64).collect();
            c.append(&k, &v, i).unwrap();
        }
        c
    }

    fn with_avg(mut cache: CacheState, avg: &[f64]) -> CacheState {
        let counts = vec![1.0; avg.len()];
        cache.set_scores(avg, &counts).unwrap();
        cache
    }

    fn bare(kind: PolicyKind, budget: usize) -> PolicyConfig {
        PolicyConfig::new(kind, budget).with_sinks(0)
    }

    #[test]
    fn under_budget_is_a_no_op() {
        let mut cache = cache_of(3, 2);
        let before = cache.positions().to_vec();
        let mut policy = Policy::new(bare(PolicyKind::WeightedKv, 4)).unwrap();
        let event = policy.enforce_budget(&mut cache, &[0.4, 0.3, 0.3]).unwrap();
        assert!(event.is_none());
        assert_eq!(cache.positions(), &before[..]);
    }

    #[test]
    fn fullkv_refuses_to_compress() {
        let mut cache = with_avg(cache_of(5, 2), &[0.5; 5]);
        let mut policy = Policy::new(bare(PolicyKind::FullKv, 4)).unwrap();
        assert!(matches!(
            policy.enforce_budget(&mut cache, &[0.2; 5]),
            Err(PolicyError::FullKvOverBudget { len: 5, budget: 4 })
        ));
    }

    #[test]
    fn select_picks_lowest_average() {
        let cache = with_avg(cache_of(5, 2), &[0.9, 0.1, 0.5, 0.8, 0.7]);
        let cfg = bare(PolicyKind::WeightedKv, 4);
        assert_eq!(weightedkv_select(&cache, &cfg).unwrap(), 1);
    }

    #[test]
    fn select_breaks_ties_toward_smallest_index() {
        let cache = with_avg(cache_of(5, 2), &[0.3; 5]);
        let cfg = bare(PolicyKind::WeightedKv, 4);
        assert_eq!(weightedkv_select(&cache, &cfg).unwrap(), 0);
        let cfg = PolicyConfig::new(PolicyKind::WeightedKv, 4).with_sinks(2);
        assert_eq!(weightedkv_select(&cache, &cfg).unwrap(), 2);
    }

    #[test]
    fn select_respects_sink_region() {
        let cache = with_avg(cache_of(5, 2), &[0.1, 0.2, 0.3, 0.4, 0.5]);
        let cfg = PolicyConfig::new(PolicyKind::WeightedKv, 4).with_sinks(1);
        assert_eq!(weightedkv_select(&cache, &cfg).unwrap(), 1);
    }

    #[test]
    fn select_never_touches_newest_or_recent() {
        // 5 slots, recent 1: eligible range is sinks..len-2, i.e. {0, 1, 2}
        let cache = with_avg(cache_of(5, 2), &[0.9, 0.8, 0.7, 0.1, 0.05]);
        let cfg = bare(PolicyKind::WeightedKv, 4).with_recent(1);
        assert_eq!(weightedkv_select(&cache, &cfg).unwrap(), 2);
    }

    #[test]
    fn compress_blends_by_score_ratio() {
        // scores 0.1 / 0.5 give (v_j + 5 v_{j+1}) / 6
        let mut cache = with_avg(cache_of(5, 2), &[0.9, 0.1, 0.5, 0.8, 0.7]);
        let v1 = cache.values().row(1).to_vec();
        let v2 = cache.values().row(2).to_vec();
        let event = weightedkv_compress(&mut cache, 1).unwrap();
        assert_eq!(cache.len(), 4);
        assert_eq!(cache.positions(), &[0, 2, 3, 4]);
        let merged = cache.values().row(1);
        for c in 0..2 {
            let expected = (v1[c] + 5.0 * v2[c]) / 6.0;
            assert!((merged[c] - expected).abs() < 1e-12);
        }
        let w = event.weights.unwrap();
        assert!((w.left() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(event.merged_into, Some(2));
        // survivor keeps its own bookkeeping
        assert_eq!(cache.avg_scores()[1], 0.5);
    }

    #[test]
    fn compress_identical_values_is_invariant() {
        let mut cache = CacheState::new(2);
        for i in 0..3 {
            cache.append(&[i as f64, 1.0], &[7.0, -2.0], i).unwrap();
        }
        let mut cache = with_avg(cache, &[0.2, 0.4, 0.4]);
        weightedkv_compress(&mut cache, 0).unwrap();
        assert!((cache.values().row(0)[0] - 7.0).abs() < 1e-12);
        assert!((cache.values().row(0)[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn compress_equal_scores_take_the_mean() {
        let mut cache = with_avg(cache_of(3, 1), &[0.4, 0.4, 0.9]);
        weightedkv_compress(&mut cache, 0).unwrap();
        assert!((cache.values().row(0)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn compress_zero_score_pair_falls_back_to_mean() {
        let mut cache = cache_of(3, 1);
        cache.set_scores(&[0.0, 0.0, 0.9], &[1.0, 1.0, 1.0]).unwrap();
        let event = weightedkv_compress(&mut cache, 0).unwrap();
        assert_eq!((event.weights.unwrap().left(), event.weights.unwrap().right()), (0.5, 0.5));
    }

    #[test]
    fn eviction_variant_matches_weightedkv_keys() {
        let avg = [0.9, 0.1, 0.5, 0.8, 0.7];
        let mut merged = with_avg(cache_of(5, 2), &avg);
        let mut evicted = merged.clone();
        weightedkv_compress(&mut merged, 1).unwrap();
        eviction_variant_compress(&mut evicted, 1).unwrap();
        assert_eq!(merged.keys(), evicted.keys());
        assert_eq!(merged.positions(), evicted.positions());
        // values differ at the merge site, untouched elsewhere
        assert_ne!(merged.values().row(1), evicted.values().row(1));
        assert_eq!(merged.values().row(0), evicted.values().row(0));
        assert_eq!(merged.values().row(2), evicted.values().row(2));
    }

    #[test]
    fn eviction_variant_never_mutates_survivors() {
        let mut cache = with_avg(cache_of(5, 2), &[0.5, 0.1, 0.4, 0.3, 0.2]);
        let original: Vec<Vec<f64>> = (0..5).map(|i| cache.values().row(i).to_vec()).collect();
        eviction_variant_compress(&mut cache, 1).unwrap();
        eviction_variant_compress(&mut cache, 2).unwrap();
        for (slot, pos) in cache.positions().to_vec().iter().enumerate() {
            assert_eq!(cache.values().row(slot), &original[*pos][..]);
        }
    }

    #[test]
    fn streaming_drops_oldest_non_sink() {
        let mut cache = with_avg(cache_of(4, 2), &[0.1; 4]);
        let cfg = PolicyConfig::new(PolicyKind::StreamingLlm, 3).with_sinks(1);
        let event = streamingllm_compress(&mut cache, &cfg).unwrap();
        assert_eq!(event.evicted_position, 1);
        assert_eq!(cache.positions(), &[0, 2, 3]);
    }

    #[test]
    fn streaming_without_sinks_is_a_sliding_window() {
        let mut cache = with_avg(cache_of(4, 2), &[0.1; 4]);
        let cfg = bare(PolicyKind::StreamingLlm, 3);
        let event = streamingllm_compress(&mut cache, &cfg).unwrap();
        assert_eq!(event.evicted_slot, 0);
        assert_eq!(cache.positions(), &[1, 2, 3]);
    }

    #[test]
    fn h2o_evicts_minimum_cumulative_score() {
        let mut cache = cache_of(4, 2);
        cache.set_scores(&[5.0, 0.2, 1.1, 0.9], &[8.0, 8.0, 8.0, 1.0]).unwrap();
        let cfg = bare(PolicyKind::H2o, 3);
        let event = h2o_compress(&mut cache, &cfg).unwrap();
        assert_eq!(event.evicted_slot, 1);
    }

    #[test]
    fn h2o_ties_take_first_compressible() {
        let mut cache = cache_of(4, 2);
        cache.set_scores(&[0.5, 0.5, 0.5, 0.5], &[1.0; 4]).unwrap();
        let cfg = bare(PolicyKind::H2o, 3);
        assert_eq!(h2o_compress(&mut cache, &cfg).unwrap().evicted_slot, 0);
    }

    #[test]
    fn tova_uses_last_step_weights() {
        let mut cache = with_avg(cache_of(4, 2), &[0.25; 4]);
        let cfg = bare(PolicyKind::Tova, 3);
        let event = tova_compress(&mut cache, &cfg, &[0.4, 0.05, 0.3, 0.25]).unwrap();
        assert_eq!(event.evicted_slot, 1);
        let mut cache = with_avg(cache_of(4, 2), &[0.25; 4]);
        assert_eq!(tova_compress(&mut cache, &cfg, &[0.25; 4]).unwrap().evicted_slot, 0);
    }

    #[test]
    fn tova_rejects_stale_weights() {
        let mut cache = with_avg(cache_of(4, 2), &[0.25; 4]);
        let cfg = bare(PolicyKind::Tova, 3);
        assert!(matches!(
            tova_compress(&mut cache, &cfg, &[0.5, 0.5]),
            Err(PolicyError::WeightsLength { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn cam_merge_branch_spreads_value() {
        // slot 0 has the lowest cumulative score AND average score 1.0,
        // so it is selected and the merge branch fires on any draw
        let mut cache = cache_of(5, 1);
        cache
            .set_scores(&[1.0, 2.0, 2.0, 2.0, 2.0], &[1.0, 2.0, 4.0, 4.0, 4.0])
            .unwrap();
        let before: Vec<f64> = (1..5).map(|i| cache.values().row(i)[0]).collect();
        let evicted = cache.values().row(0)[0];
        let cfg = bare(PolicyKind::Cam, 4).with_cam_window(2);
        let mut rng = SplitMix64::new(7);
        let event = cam_compress(&mut cache, &cfg, &mut rng).unwrap();
        assert_eq!(event.evicted_slot, 0);
        assert_eq!(event.merged_into, Some(1));
        assert!((cache.values().row(0)[0] - (before[0] + evicted / 2.0)).abs() < 1e-12);
        assert!((cache.values().row(1)[0] - (before[1] + evicted / 2.0)).abs() < 1e-12);
        assert_eq!(cache.values().row(2)[0], before[2]);
    }

    #[test]
    fn cam_discard_branch_is_pure_eviction() {
        // average score 0 never merges (draws are strictly positive)
        let mut cache = cache_of(5, 1);
        cache.set_scores(&[0.0, 0.5, 0.5, 0.5, 0.5], &[1.0; 5]).unwrap();
        let before: Vec<f64> = (1..5).map(|i| cache.values().row(i)[0]).collect();
        let cfg = bare(PolicyKind::Cam, 4);
        let mut rng = SplitMix64::new(7);
        let event = cam_compress(&mut cache, &cfg, &mut rng).unwrap();
        assert_eq!(event.merged_into, None);
        for (i, b) in before.iter().enumerate() {
            assert_eq!(cache.values().row(i)[0], *b);
        }
    }

    #[test]
    fn cam_is_deterministic_per_seed() {
        let run = |seed| {
            let mut cache = cache_of(5, 2);
            let cfg = bare(PolicyKind::Cam, 4).with_seed(seed);
            let mut policy = Policy::new(cfg).unwrap();
            let mut events = Vec::new();
            for extra in 0..4 {
                let scores: Vec<f64> = (0..5).map(|i| 0.3 + 0.1 * ((i + extra) % 5) as f64).collect();
                cache.set_scores(&scores, &[1.0; 5]).unwrap();
                let weights = vec![0.2; 5];
                events.push(policy.enforce_budget(&mut cache, &weights).unwrap());
                cache
                    .append(&[extra as f64, 0.0], &[1.0, 1.0], 5 + extra)
                    .unwrap();
            }
            format!("{events:?}")
        };
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn config_invariants_are_enforced() {
        assert!(Policy::new(PolicyConfig::new(PolicyKind::H2o, 1)).is_err());
        let cfg = PolicyConfig::new(PolicyKind::H2o, 8).with_sinks(4).with_recent(4);
        assert!(Policy::new(cfg).is_err());
        let cfg = PolicyConfig::new(PolicyKind::H2o, 9).with_sinks(4).with_recent(4);
        assert!(Policy::new(cfg).is_ok());
    }

    #[test]
    fn overflowed_cache_is_rejected() {
        let mut cache = with_avg(cache_of(6, 2), &[0.5; 6]);
        let mut policy = Policy::new(bare(PolicyKind::H2o, 4)).unwrap();
        assert!(matches!(
            policy.enforce_budget(&mut cache, &[0.1; 6]),
            Err(PolicyError::CacheOverflow { len: 6, budget: 4 })
        ));
    }

    #[test]
    fn select_errors_when_protection_covers_everything() {
        // 3 slots with 2 sinks and 2 recent leaves no eligible range
        let cache = with_avg(cache_of(3, 2), &[0.5, 0.5, 0.5]);
        let cfg = PolicyConfig::new(PolicyKind::WeightedKv, 8).with_sinks(2).with_recent(2);
        assert!(matches!(weightedkv_select(&cache, &cfg), Err(PolicyError::NoCompressibleSlot)));
    }

    #[test]
    fn policy_names_round_trip() {
        for kind in PolicyKind::ALL {
            assert_eq!(kind.name().parse::<PolicyKind>().unwrap(), kind);
        }
        assert!("nope".parse::<PolicyKind>().is_err());
    }
}
