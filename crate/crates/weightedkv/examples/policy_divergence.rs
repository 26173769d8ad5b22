//! Race every policy against full attention on the same token streams and
//! rank them by final-layer output divergence.
//!
//! ```bash
//! cargo run --example policy_divergence
//! ```

use weightedkv::harness::{run_policy_divergence, DivergenceConfig};
use weightedkv::policy::{PolicyConfig, PolicyKind};
use weightedkv::toy_model::ToyModelConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let budget = 24;
    let kinds = [
        PolicyKind::StreamingLlm,
        PolicyKind::H2o,
        PolicyKind::Tova,
        PolicyKind::Cam,
        PolicyKind::WeightedKv,
        PolicyKind::EvictionVariant,
    ];
    let policies: Vec<PolicyConfig> = kinds
        .iter()
        .map(|&kind| PolicyConfig::new(kind, budget).with_sinks(4).with_recent(6).with_seed(1))
        .collect();

    let seeds: Vec<u64> = (1..=10).collect();
    let config = DivergenceConfig::new(ToyModelConfig::new(2, 4, 16), 96, policies, seeds);
    let rows = run_policy_divergence(&config)?;

    println!("96-token streams, budget {budget} (4 sinks + 6 recent), 10 seeds");
    println!("mean final-layer divergence from full attention:\n");
    println!("{:>14} {:>12} {:>12}", "policy", "L2", "cosine");
    let mut ranked: Vec<(String, f64, f64)> = kinds
        .iter()
        .map(|kind| {
            let name = kind.name();
            let collect = |metric: &str| -> f64 {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.policy == name && r.metric == metric)
                    .map(|r| r.value)
                    .collect();
                values.iter().sum::<f64>() / values.len() as f64
            };
            (name.to_string(), collect("l2"), collect("cos"))
        })
        .collect();
    ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite divergence"));
    for (name, l2, cos) in ranked {
        println!("{name:>14} {l2:>12.6} {cos:>12.6}");
    }
    println!("\n(lower L2 and higher cosine mean the compressed cache tracks full attention better)");
    Ok(())
}
