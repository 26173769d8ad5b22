//! Drive a single attention head with a WeightedKV-compressed cache and
//! print every compression decision as it happens.
//!
//! ```bash
//! cargo run --example cache_compression
//! ```

use weightedkv::attention::CacheState;
use weightedkv::policy::{Policy, PolicyConfig, PolicyKind};
use weightedkv::rng::SplitMix64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d = 4;
    let budget = 6;
    let steps = 16;

    let config = PolicyConfig::new(PolicyKind::WeightedKv, budget)
        .with_sinks(1)
        .with_recent(2);
    let mut policy = Policy::new(config)?;
    let mut cache = CacheState::new(d);
    let mut rng = SplitMix64::new(7);

    println!("budget {budget}, 1 sink, 2 recent; feeding {steps} random tokens\n");
    for t in 0..steps {
        let key = rng.gaussian_vec(d);
        let value = rng.gaussian_vec(d);
        let query = rng.gaussian_vec(d);

        cache.append(&key, &value, t)?;
        let step = cache.attend(&query)?;
        match policy.enforce_budget(&mut cache, &step.weights)? {
            Some(event) => {
                let w = event.weights.expect("merges carry weights");
                println!(
                    "step {t:2}: merged token {:2} into token {:2} (weights {:.3}/{:.3}); retained {:?}",
                    event.evicted_position,
                    event.merged_position.expect("merge target"),
                    w.left(),
                    w.right(),
                    cache.positions(),
                );
            }
            None => println!("step {t:2}: under budget; retained {:?}", cache.positions()),
        }
    }

    println!("\nfinal average attention per slot:");
    for (pos, avg) in cache.positions().iter().zip(cache.avg_scores()) {
        println!("  token {pos:2}: {avg:.4}");
    }
    Ok(())
}
