//! The experiment implementations behind the CLI subcommands.

use crate::attention::CacheState;
use crate::merge::{approx_merge_weights, attention_perturbation, convex_combine, ideal_merge};
use crate::numerics::{self, Mat};
use crate::policy::{weightedkv_compress, Policy, PolicyConfig};
use crate::rng::SplitMix64;
use crate::toy_model::{random_token_ids, ToyModel, ToyModelConfig};
use crate::trace::QkvTrace;

use super::{map_seeds, mean_var_std, sort_rows, HarnessError, MetricRow};

// ---------------------------------------------------------------------------
// Singular value spectra of accumulated K and V matrices
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SpectrumConfig {
    pub model: ToyModelConfig,
    pub steps: usize,
    pub seeds: Vec<u64>,
}

impl SpectrumConfig {
    pub fn new(model: ToyModelConfig, steps: usize, seeds: Vec<u64>) -> Self {
        Self { model, steps, seeds }
    }
}

/// Normalized singular value spectra of one trace's per-head key and value
/// matrices, plus the curves averaged over all heads. Emitted metrics are
/// `sigma_k_{i}` / `sigma_v_{i}` per (layer, head) and `sigma_k_mean_{i}` /
/// `sigma_v_mean_{i}` (layer and head columns 0) for the averages; the step
/// column holds the final step index of the trace.
pub fn spectrum_rows(
    trace: &QkvTrace,
    experiment: &str,
    seed: u64,
) -> Result<Vec<MetricRow>, HarnessError> {
    let d = trace.d_head();
    if trace.steps() < d {
        return Err(HarnessError::SequenceTooShort { steps: trace.steps(), needed: d });
    }
    let last_step = trace.steps() - 1;
    let mut rows = Vec::new();
    let mut k_sum = vec![0.0; d];
    let mut v_sum = vec![0.0; d];
    for layer in 0..trace.layers() {
        for head in 0..trace.heads() {
            let keys = Mat::from_rows(&trace.key_rows(layer, head))?;
            let values = Mat::from_rows(&trace.value_rows(layer, head))?;
            let sk = numerics::normalized_spectrum(&keys)?;
            let sv = numerics::normalized_spectrum(&values)?;
            for (i, (k, v)) in sk.iter().zip(&sv).enumerate() {
                k_sum[i] += k;
                v_sum[i] += v;
                rows.push(MetricRow::new(
                    experiment, seed, last_step, layer, head, "-",
                    format!("sigma_k_{i}"), *k,
                )?);
                rows.push(MetricRow::new(
                    experiment, seed, last_step, layer, head, "-",
                    format!("sigma_v_{i}"), *v,
                )?);
            }
        }
    }
    let heads_total = (trace.layers() * trace.heads()) as f64;
    for i in 0..d {
        rows.push(MetricRow::new(
            experiment, seed, last_step, 0, 0, "-",
            format!("sigma_k_mean_{i}"), k_sum[i] / heads_total,
        )?);
        rows.push(MetricRow::new(
            experiment, seed, last_step, 0, 0, "-",
            format!("sigma_v_mean_{i}"), v_sum[i] / heads_total,
        )?);
    }
    Ok(rows)
}

/// Runs an uncompressed decode per seed and reports the key/value spectra
/// of every head; see [`spectrum_rows`] for the emitted metrics.
pub fn run_spectrum(config: &SpectrumConfig) -> Result<Vec<MetricRow>, HarnessError> {
    config.model.validate()?;
    if config.steps < config.model.d_head {
        return Err(HarnessError::SequenceTooShort {
            steps: config.steps,
            needed: config.model.d_head,
        });
    }
    let mut rows = map_seeds(&config.seeds, |seed| {
        let mut model_cfg = config.model.clone();
        model_cfg.seed = seed;
        let model = ToyModel::new(model_cfg)?;
        let tokens = random_token_ids(config.model.vocab, config.steps, seed);
        let trace = model.generate_trace(&tokens, None)?;
        spectrum_rows(&trace, "spectrum", seed)
    })?;
    sort_rows(&mut rows);
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Attention perturbation after a single merge
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PerturbationConfig {
    pub model: ToyModelConfig,
    /// Number of tokens processed before the merge.
    pub merge_step: usize,
    /// Steps measured after the merge.
    pub window: usize,
    pub seeds: Vec<u64>,
}

impl PerturbationConfig {
    pub fn new(model: ToyModelConfig, merge_step: usize, window: usize, seeds: Vec<u64>) -> Self {
        Self { model, merge_step, window, seeds }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Measures how one value merge perturbs later attention distributions.
///
/// Per seed and head: decode without compression, replay the head's stream
/// into a cache up to `merge_step`, then fold the token with the *lowest*
/// historical average attention into its right neighbor — and, for
/// contrast, the *highest* — in two cache clones. Both merged caches and
/// the full cache then consume the identical remaining stream, and every
/// following step emits the cosine similarity between the full attention
/// distribution (with the merged slot folded away) and each merged cache's
/// distribution: metrics `cos_low` and `cos_high`.
///
/// Per-seed means land in `cos_low_mean` / `cos_high_mean`; per-step
/// across-seed aggregates land in `*_step_mean`, `*_step_var`, and
/// `*_step_std` rows (seed 0, policy `summary`), reporting both variance
/// and standard deviation.
pub fn run_perturbation(config: &PerturbationConfig) -> Result<Vec<MetricRow>, HarnessError> {
    config.model.validate()?;
    if config.merge_step < 2 {
        return Err(HarnessError::InvalidConfig("merge step must be at least 2".into()));
    }
    if config.window < 1 {
        return Err(HarnessError::InvalidConfig("window must be at least 1 step".into()));
    }
    let steps = config.merge_step + config.window;
    let mut rows = map_seeds(&config.seeds, |seed| {
        let mut model_cfg = config.model.clone();
        model_cfg.seed = seed;
        let model = ToyModel::new(model_cfg)?;
        let tokens = random_token_ids(config.model.vocab, steps, seed);
        let trace = model.generate_trace(&tokens, None)?;
        let mut rows = Vec::new();
        let mut low_values = Vec::new();
        let mut high_values = Vec::new();
        for layer in 0..trace.layers() {
            for head in 0..trace.heads() {
                let queries = trace.query_rows(layer, head);
                let keys = trace.key_rows(layer, head);
                let values = trace.value_rows(layer, head);

                let mut full = CacheState::new(trace.d_head());
                for t in 0..config.merge_step {
                    full.append(&keys[t], &values[t], t)?;
                    full.attend(&queries[t])?;
                }
                // the last slot has no right neighbor to merge into
                let avg = &full.avg_scores()[..config.merge_step - 1];
                let slot_low = argmin(avg);
                let slot_high = argmax(avg);

                let mut low = full.clone();
                weightedkv_compress(&mut low, slot_low)?;
                let mut high = full.clone();
                weightedkv_compress(&mut high, slot_high)?;

                for t in config.merge_step..steps {
                    full.append(&keys[t], &values[t], t)?;
                    low.append(&keys[t], &values[t], t)?;
                    high.append(&keys[t], &values[t], t)?;
                    let w_full = full.attend(&queries[t])?.weights;
                    let w_low = low.attend(&queries[t])?.weights;
                    let w_high = high.attend(&queries[t])?.weights;
                    let cos_low = attention_perturbation(&w_full, &w_low, slot_low)?;
                    let cos_high = attention_perturbation(&w_full, &w_high, slot_high)?;
                    low_values.push(cos_low);
                    high_values.push(cos_high);
                    rows.push(MetricRow::new(
                        "perturb", seed, t, layer, head, "-", "cos_low".into(), cos_low,
                    )?);
                    rows.push(MetricRow::new(
                        "perturb", seed, t, layer, head, "-", "cos_high".into(), cos_high,
                    )?);
                }
            }
        }
        let (low_mean, _, _) = mean_var_std(&low_values);
        let (high_mean, _, _) = mean_var_std(&high_values);
        rows.push(MetricRow::new(
            "perturb", seed, steps, 0, 0, "-", "cos_low_mean".into(), low_mean,
        )?);
        rows.push(MetricRow::new(
            "perturb", seed, steps, 0, 0, "-", "cos_high_mean".into(), high_mean,
        )?);
        Ok(rows)
    })?;

    // per-step aggregates across seeds (and heads), for error bars
    for metric in ["cos_low", "cos_high"] {
        for t in config.merge_step..steps {
            let step_values: Vec<f64> = rows
                .iter()
                .filter(|r| r.metric == metric && r.step == t)
                .map(|r| r.value)
                .collect();
            let (mean, var, std) = mean_var_std(&step_values);
            for (suffix, value) in [("step_mean", mean), ("step_var", var), ("step_std", std)] {
                rows.push(MetricRow::new(
                    "perturb", 0, t, 0, 0, "summary", format!("{metric}_{suffix}"), value,
                )?);
            }
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Output divergence of compressed decodes from full attention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DivergenceConfig {
    pub model: ToyModelConfig,
    pub steps: usize,
    pub policies: Vec<PolicyConfig>,
    pub seeds: Vec<u64>,
}

impl DivergenceConfig {
    pub fn new(
        model: ToyModelConfig,
        steps: usize,
        policies: Vec<PolicyConfig>,
        seeds: Vec<u64>,
    ) -> Self {
        Self { model, steps, policies, seeds }
    }
}

fn divergence_pair(output: &[f64], reference: &[f64]) -> (f64, f64) {
    let l2 = numerics::l2_distance(output, reference);
    let cos = if l2 == 0.0 {
        1.0
    } else {
        numerics::cosine_similarity(output, reference).unwrap_or(0.0)
    };
    (l2, cos)
}

/// Decodes the same token stream under each policy and under no policy,
/// comparing the final layer's concatenated attention output per step.
///
/// Emits `l2` and `cos` per (seed, step, policy) with the layer column set
/// to the final layer (head 0 stands for the concatenation of all heads),
/// plus per-seed `l2_mean` / `cos_mean` summary rows at step = steps.
pub fn run_policy_divergence(config: &DivergenceConfig) -> Result<Vec<MetricRow>, HarnessError> {
    config.model.validate()?;
    if config.policies.len() < 2 {
        return Err(HarnessError::InvalidConfig(
            "divergence comparison needs at least 2 policies".into(),
        ));
    }
    for p in &config.policies {
        p.validate()?;
    }
    if config.steps == 0 {
        return Err(HarnessError::SequenceTooShort { steps: 0, needed: 1 });
    }
    let last_layer = config.model.layers - 1;
    let mut rows = map_seeds(&config.seeds, |seed| {
        let mut model_cfg = config.model.clone();
        model_cfg.seed = seed;
        let model = ToyModel::new(model_cfg)?;
        let tokens = random_token_ids(config.model.vocab, config.steps, seed);
        let reference = model.decode(&tokens, None)?.final_attention;
        let mut rows = Vec::new();
        for policy in &config.policies {
            let name = policy.kind.name();
            let run = model.decode(&tokens, Some(policy))?;
            let mut l2_all = Vec::with_capacity(config.steps);
            let mut cos_all = Vec::with_capacity(config.steps);
            for (t, (out, reference_out)) in
                run.final_attention.iter().zip(&reference).enumerate()
            {
                let (l2, cos) = divergence_pair(out, reference_out);
                l2_all.push(l2);
                cos_all.push(cos);
                rows.push(MetricRow::new(
                    "diverge", seed, t, last_layer, 0, name, "l2".into(), l2,
                )?);
                rows.push(MetricRow::new(
                    "diverge", seed, t, last_layer, 0, name, "cos".into(), cos,
                )?);
            }
            let (l2_mean, _, _) = mean_var_std(&l2_all);
            let (cos_mean, _, _) = mean_var_std(&cos_all);
            rows.push(MetricRow::new(
                "diverge", seed, config.steps, last_layer, 0, name, "l2_mean".into(), l2_mean,
            )?);
            rows.push(MetricRow::new(
                "diverge", seed, config.steps, last_layer, 0, name, "cos_mean".into(), cos_mean,
            )?);
        }
        Ok(rows)
    })?;
    sort_rows(&mut rows);
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Ideal-merge exactness sweep and approximation gap
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct IdealCheckConfig {
    pub seeds: Vec<u64>,
    pub t_values: Vec<usize>,
    pub d_values: Vec<usize>,
    /// Points in the descending-attention sweep of the approximation gap.
    pub sweep_points: usize,
}

impl IdealCheckConfig {
    pub fn new(seeds: Vec<u64>) -> Self {
        Self {
            seeds,
            t_values: vec![2, 3, 4, 8, 16, 32, 64],
            d_values: vec![2, 4, 8, 16, 32],
            sweep_points: 12,
        }
    }
}

/// Attention output for one query over explicit key/value lists; the
/// direct evaluation the exactness check compares against.
fn attention_output(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    let d = query.len();
    let inv = 1.0 / (d as f64).sqrt();
    let logits: Vec<f64> = keys.iter().map(|k| numerics::dot(query, k) * inv).collect();
    let weights = numerics::softmax(&logits).expect("non-empty logits");
    let mut out = vec![0.0; values[0].len()];
    for (w, v) in weights.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

/// Relative output error of substituting (k1, k2, v1, v2) -> (k2, v~) for
/// one seeded case.
pub fn ideal_merge_relative_error(t: usize, d: usize, seed: u64) -> Result<f64, HarnessError> {
    let mut rng = SplitMix64::with_stream(seed, (t as u64) << 32 | d as u64);
    let query = rng.gaussian_vec(d);
    let keys: Vec<Vec<f64>> = (0..t).map(|_| rng.gaussian_vec(d)).collect();
    let values: Vec<Vec<f64>> = (0..t).map(|_| rng.gaussian_vec(d)).collect();
    let original = attention_output(&query, &keys, &values);
    let merged_value = ideal_merge(&query, &keys, &values)?;
    let mut reduced_keys = keys[1..].to_vec();
    let mut reduced_values = values[1..].to_vec();
    reduced_keys[0] = keys[1].clone();
    reduced_values[0] = merged_value;
    let substituted = attention_output(&query, &reduced_keys, &reduced_values);
    let norm = numerics::l2_norm(&original);
    let err = numerics::l2_distance(&original, &substituted);
    Ok(if norm > 0.0 { err / norm } else { err })
}

/// Checks the defining identity of the ideal merge on a seeded (t, d) grid
/// and measures how the two-term approximation degrades as the evicted
/// token's attention weight grows.
///
/// Emits per grid point: `ideal_rel_err` with step = t and layer = d, and
/// per seed the grid maximum as `ideal_rel_err_max`. The sweep (t = 8,
/// d = 8, evicted logit stepped downward) emits `evicted_weight` and
/// `approx_gap` per sweep index, plus one `gap_monotone` row per seed
/// (1.0 when the gap never increased along the sweep).
pub fn run_ideal_check(config: &IdealCheckConfig) -> Result<Vec<MetricRow>, HarnessError> {
    if config.t_values.iter().any(|&t| t < 2) {
        return Err(HarnessError::InvalidConfig("t values must be at least 2".into()));
    }
    if config.d_values.contains(&0) {
        return Err(HarnessError::InvalidConfig("d values must be at least 1".into()));
    }
    if config.sweep_points < 2 {
        return Err(HarnessError::InvalidConfig("sweep needs at least 2 points".into()));
    }
    let mut rows = map_seeds(&config.seeds, |seed| {
        let mut rows = Vec::new();
        let mut worst = 0.0f64;
        for &t in &config.t_values {
            for &d in &config.d_values {
                let rel_err = ideal_merge_relative_error(t, d, seed)?;
                worst = worst.max(rel_err);
                rows.push(MetricRow::new(
                    "ideal-check", seed, t, d, 0, "-", "ideal_rel_err".into(), rel_err,
                )?);
            }
        }
        rows.push(MetricRow::new(
            "ideal-check", seed, 0, 0, 0, "-", "ideal_rel_err_max".into(), worst,
        )?);

        // sweep: push the evicted token's logit down one unit per point
        let (t, d) = (8, 8);
        let mut rng = SplitMix64::with_stream(seed, 0x0073_7765_6570);
        let query = rng.gaussian_vec(d);
        let mut keys: Vec<Vec<f64>> = (0..t).map(|_| rng.gaussian_vec(d)).collect();
        let values: Vec<Vec<f64>> = (0..t).map(|_| rng.gaussian_vec(d)).collect();
        let q_norm_sq = numerics::dot(&query, &query);
        let step_vec: Vec<f64> =
            query.iter().map(|q| q * (d as f64).sqrt() / q_norm_sq).collect();
        let mut monotone = true;
        let mut previous_gap = f64::INFINITY;
        for s in 0..config.sweep_points {
            if s > 0 {
                for (k, dk) in keys[0].iter_mut().zip(&step_vec) {
                    *k -= dk;
                }
            }
            let inv = 1.0 / (d as f64).sqrt();
            let logits: Vec<f64> =
                keys.iter().map(|k| numerics::dot(&query, k) * inv).collect();
            let weights = numerics::softmax(&logits)?;
            let ideal = ideal_merge(&query, &keys, &values)?;
            let w = approx_merge_weights(&query, &keys[0], &keys[1])?;
            let approx = convex_combine(&w, &values[0], &values[1])?;
            let gap = numerics::l2_distance(&ideal, &approx);
            if gap > previous_gap + 1e-12 {
                monotone = false;
            }
            previous_gap = gap;
            rows.push(MetricRow::new(
                "ideal-check", seed, s, 0, 0, "-", "evicted_weight".into(), weights[0],
            )?);
            rows.push(MetricRow::new(
                "ideal-check", seed, s, 0, 0, "-", "approx_gap".into(), gap,
            )?);
        }
        rows.push(MetricRow::new(
            "ideal-check", seed, config.sweep_points, 0, 0, "-",
            "gap_monotone".into(), if monotone { 1.0 } else { 0.0 },
        )?);
        Ok(rows)
    })?;
    sort_rows(&mut rows);
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Trace replay under one policy
// ---------------------------------------------------------------------------

/// Replays a recorded q/k/v stream through one policy per head and
/// compares each head's attention output against the full-attention
/// reference over the same stream.
///
/// Emits `l2` and `cos` per (step, layer, head) plus per-head `l2_mean` /
/// `cos_mean` rows at step = steps. `seed` only labels the rows; the
/// replay itself is deterministic given the trace and policy.
pub fn replay_trace(
    trace: &QkvTrace,
    policy: &PolicyConfig,
    seed: u64,
) -> Result<Vec<MetricRow>, HarnessError> {
    policy.validate()?;
    let name = policy.kind.name();
    let mut rows = Vec::new();
    for layer in 0..trace.layers() {
        for head in 0..trace.heads() {
            let queries = trace.query_rows(layer, head);
            let keys = trace.key_rows(layer, head);
            let values = trace.value_rows(layer, head);
            let reference = crate::attention::full_attention_reference(&queries, &keys, &values)?;

            let mut per_head = policy.clone();
            let stream = (layer * trace.heads() + head) as u64;
            per_head.rng_seed = SplitMix64::with_stream(policy.rng_seed, stream).next_u64();
            let mut driver = Policy::new(per_head)?;
            let mut cache = CacheState::new(trace.d_head());
            let mut l2_all = Vec::with_capacity(trace.steps());
            let mut cos_all = Vec::with_capacity(trace.steps());
            for t in 0..trace.steps() {
                cache.append(&keys[t], &values[t], t)?;
                let step = cache.attend(&queries[t])?;
                driver.enforce_budget(&mut cache, &step.weights)?;
                let (l2, cos) = divergence_pair(&step.output, &reference[t]);
                l2_all.push(l2);
                cos_all.push(cos);
                rows.push(MetricRow::new("replay", seed, t, layer, head, name, "l2".into(), l2)?);
                rows.push(MetricRow::new("replay", seed, t, layer, head, name, "cos".into(), cos)?);
            }
            let (l2_mean, _, _) = mean_var_std(&l2_all);
            let (cos_mean, _, _) = mean_var_std(&cos_all);
            rows.push(MetricRow::new(
                "replay", seed, trace.steps(), layer, head, name, "l2_mean".into(), l2_mean,
            )?);
            rows.push(MetricRow::new(
                "replay", seed, trace.steps(), layer, head, name, "cos_mean".into(), cos_mean,
            )?);
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}
