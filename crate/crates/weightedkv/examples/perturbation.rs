//! How much does one value merge disturb future attention?
//!
//! Merges the token with the lowest historical average attention — and,
//! for contrast, the highest — then measures the cosine similarity
//! between the compressed and uncompressed attention distributions over
//! the following steps. Low-attention merges should barely register.
//!
//! ```bash
//! cargo run --example perturbation
//! ```

use weightedkv::harness::{run_perturbation, PerturbationConfig};
use weightedkv::toy_model::ToyModelConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: Vec<u64> = (1..=8).collect();
    let config = PerturbationConfig::new(ToyModelConfig::new(2, 2, 16), 40, 80, seeds.clone());
    let rows = run_perturbation(&config)?;

    println!("merge after 40 tokens, measure 80 steps, 2 layers x 2 heads:\n");
    println!("{:>6} {:>16} {:>16}", "seed", "cos(low merge)", "cos(high merge)");
    for &seed in &seeds {
        let get = |metric: &str| {
            rows.iter().find(|r| r.seed == seed && r.metric == metric).unwrap().value
        };
        println!("{:>6} {:>16.8} {:>16.8}", seed, get("cos_low_mean"), get("cos_high_mean"));
    }

    let step_mean = |metric: &str, step: usize| {
        rows.iter()
            .find(|r| r.metric == metric && r.step == step)
            .map(|r| r.value)
            .unwrap_or(f64::NAN)
    };
    println!("\nacross-seed per-step summary (first measured steps):");
    println!("{:>6} {:>14} {:>14} {:>14}", "step", "low mean", "low std", "high mean");
    for step in 40..46 {
        println!(
            "{:>6} {:>14.8} {:>14.3e} {:>14.8}",
            step,
            step_mean("cos_low_step_mean", step),
            step_mean("cos_low_step_std", step),
            step_mean("cos_high_step_mean", step),
        );
    }
    Ok(())
}
