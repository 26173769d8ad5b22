//! Golden replay of the published toy compression walkthrough.
//!
//! An 8-token stream is driven through WeightedKV with budget 4 and no
//! protected regions, feeding the prescribed average-attention table
//! instead of live softmax outputs. The replay pins down, exactly:
//!
//! - the first compression (generation step 5) merges token 2 into token 3
//!   with weights (1/6, 5/6), from average scores 0.1 and 0.5;
//! - after the step-8 compression the cache retains tokens {3, 6, 7, 8};
//! - the surviving slots for tokens 3 and 6 each blend three original
//!   values.
//!
//! Tokens are labeled 1..=8, matching the generation step that produced
//! them. Any deviation is a regression and reported as an error.

use crate::attention::CacheState;
use crate::policy::{CompressionEvent, Policy, PolicyConfig, PolicyKind};

use super::HarnessError;

/// Average attention scores per generation step, over the slots present
/// after the step's token is appended. Compression triggers from step 5 on.
const SCHEDULE: [&[f64]; 8] = [
    &[1.0],
    &[0.9, 0.1],
    &[0.9, 0.1, 0.5],
    &[0.9, 0.1, 0.5, 0.8],
    &[0.9, 0.1, 0.5, 0.8, 0.7],
    &[0.1, 0.5, 0.8, 0.7, 0.6],
    &[0.6, 0.2, 0.6, 0.7, 0.8],
    &[0.6, 0.15, 0.45, 0.8, 0.7],
];

const BUDGET: usize = 4;

/// Everything the replay produced, for printing and regression checks.
#[derive(Debug, Clone)]
pub struct GoldenReport {
    pub events: Vec<CompressionEvent>,
    pub final_positions: Vec<usize>,
    /// Final value rows (d = 1), one per retained slot.
    pub final_values: Vec<f64>,
}

impl GoldenReport {
    /// Human-readable event log, one line per compression.
    pub fn log_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .events
            .iter()
            .map(|e| {
                let weights = e
                    .weights
                    .as_ref()
                    .map(|w| format!(" weights ({:.6}, {:.6})", w.left(), w.right()))
                    .unwrap_or_default();
                format!(
                    "step {}: merged token {} into token {}{}",
                    e.step + 1,
                    e.evicted_position,
                    e.merged_position.expect("golden events always merge"),
                    weights
                )
            })
            .collect();
        lines.push(format!(
            "final cache: tokens {:?} values {:?}",
            self.final_positions, self.final_values
        ));
        lines
    }
}

fn check(ok: bool, msg: &str) -> Result<(), HarnessError> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::GoldenMismatch(msg.to_string()))
    }
}

/// Replays the schedule through the real policy machinery and verifies the
/// pinned outcomes. Deterministic; repeated runs produce identical reports.
pub fn run_golden_trace() -> Result<GoldenReport, HarnessError> {
    let config = PolicyConfig::new(PolicyKind::WeightedKv, BUDGET).with_sinks(0).with_recent(0);
    let mut policy = Policy::new(config)?;
    let mut cache = CacheState::new(1);
    let mut events = Vec::new();

    for (i, row) in SCHEDULE.iter().enumerate() {
        let token = (i + 1) as f64;
        cache.append(&[token], &[token], i + 1)?;
        let step = cache.attend(&[1.0])?;
        // replace the live bookkeeping with the prescribed table
        cache.set_scores(row, &vec![1.0; row.len()])?;
        if let Some(event) = policy.enforce_budget(&mut cache, &step.weights)? {
            events.push(event);
        }
    }

    let report = GoldenReport {
        final_positions: cache.positions().to_vec(),
        final_values: (0..cache.len()).map(|i| cache.values().row(i)[0]).collect(),
        events,
    };

    check(report.events.len() == 4, "expected 4 compression events")?;
    let first = &report.events[0];
    check(first.step + 1 == 5, "first compression must run at generation step 5")?;
    check(first.evicted_position == 2, "step 5 must evict token 2")?;
    check(first.merged_position == Some(3), "step 5 must merge into token 3")?;
    let w = first.weights.as_ref().expect("weightedkv events carry weights");
    // scores 0.1 and 0.5 normalize to exactly the f64 quotients below,
    // which sit within half an ulp of the rationals 1/6 and 5/6
    check(w.left() == 0.1 / (0.1 + 0.5), "step 5 left weight must equal 0.1/(0.1+0.5)")?;
    check(w.right() == 0.5 / (0.1 + 0.5), "step 5 right weight must equal 0.5/(0.1+0.5)")?;
    check((w.left() - 1.0 / 6.0).abs() < 1e-15, "step 5 left weight must be 1/6")?;
    check((w.right() - 5.0 / 6.0).abs() < 1e-15, "step 5 right weight must be 5/6")?;

    check(report.final_positions == [3, 6, 7, 8], "final cache must retain tokens {3, 6, 7, 8}")?;
    // token 3's slot blends values 1, 2, 3; token 6's blends 4, 5, 6
    let v3 = report.final_values[0];
    let v6 = report.final_values[1];
    check((v3 - 91.0 / 36.0).abs() < 1e-12, "token 3 slot must blend three values into 91/36")?;
    check((v6 - 91.0 / 16.0).abs() < 1e-12, "token 6 slot must blend three values into 91/16")?;
    check(report.final_values[2] == 7.0, "token 7 value must be untouched")?;
    check(report.final_values[3] == 8.0, "token 8 value must be untouched")?;
    Ok(report)
}
