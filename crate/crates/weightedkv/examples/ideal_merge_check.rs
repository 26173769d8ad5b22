//! The exact-substitution identity in action: replace two adjacent values
//! by the closed-form merge, drop the first key, and watch the attention
//! output stay put — then see how the cheap two-term approximation
//! degrades as the evicted token's attention weight grows.
//!
//! ```bash
//! cargo run --example ideal_merge_check
//! ```

use weightedkv::harness::{run_ideal_check, IdealCheckConfig};
use weightedkv::merge::{approx_merge_weights, convex_combine, ideal_merge};
use weightedkv::numerics::{dot, l2_distance, softmax};
use weightedkv::rng::SplitMix64;

fn attention(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    let d = query.len();
    let logits: Vec<f64> = keys.iter().map(|k| dot(query, k) / (d as f64).sqrt()).collect();
    let weights = softmax(&logits).expect("non-empty");
    let mut out = vec![0.0; d];
    for (w, v) in weights.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (t, d) = (12, 8);
    let mut rng = SplitMix64::new(2024);
    let query = rng.gaussian_vec(d);
    let keys: Vec<Vec<f64>> = (0..t).map(|_| rng.gaussian_vec(d)).collect();
    let values: Vec<Vec<f64>> = (0..t).map(|_| rng.gaussian_vec(d)).collect();

    let original = attention(&query, &keys, &values);
    let merged = ideal_merge(&query, &keys, &values)?;
    let mut reduced_keys = keys[1..].to_vec();
    reduced_keys[0] = keys[1].clone();
    let mut reduced_values = values[1..].to_vec();
    reduced_values[0] = merged.clone();
    let substituted = attention(&query, &reduced_keys, &reduced_values);
    println!("exact substitution, t = {t}, d = {d}:");
    println!("  output change after dropping key 0: {:.3e}\n", l2_distance(&original, &substituted));

    let w = approx_merge_weights(&query, &keys[0], &keys[1])?;
    let approx = convex_combine(&w, &values[0], &values[1])?;
    println!("two-term convex approximation:");
    println!("  weights ({:.4}, {:.4}), gap to the exact merge: {:.4}\n", w.left(), w.right(), l2_distance(&merged, &approx));

    println!("gap vs evicted token's attention weight (one seeded sweep):");
    let rows = run_ideal_check(&IdealCheckConfig::new(vec![3]))?;
    let weight_of = |step: usize| {
        rows.iter().find(|r| r.metric == "evicted_weight" && r.step == step).unwrap().value
    };
    let gap_of = |step: usize| {
        rows.iter().find(|r| r.metric == "approx_gap" && r.step == step).unwrap().value
    };
    for step in 0..12 {
        println!("  weight {:>10.3e}  ->  gap {:>10.3e}", weight_of(step), gap_of(step));
    }
    Ok(())
}
