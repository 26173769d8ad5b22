//! Record a q/k/v trace to `.qkv.jsonl`, read it back bit-exactly, and
//! replay it under a compression policy.
//!
//! ```bash
//! cargo run --example trace_roundtrip
//! ```

use weightedkv::harness::replay_trace;
use weightedkv::policy::{PolicyConfig, PolicyKind};
use weightedkv::toy_model::{random_token_ids, ToyModel, ToyModelConfig};
use weightedkv::trace::QkvTrace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ToyModelConfig::new(2, 2, 8).with_seed(33);
    let model = ToyModel::new(config)?;
    let tokens = random_token_ids(256, 48, 33);
    let trace = model.generate_trace(&tokens, None)?;

    let path = std::env::temp_dir().join("weightedkv-example.qkv.jsonl");
    trace.to_file(&path)?;
    let restored = QkvTrace::from_file(&path)?;
    assert_eq!(trace, restored, "the jsonl round trip is bit-exact");
    println!(
        "wrote {} ({} steps x {} layers x {} heads, d_head {})",
        path.display(),
        restored.steps(),
        restored.layers(),
        restored.heads(),
        restored.d_head()
    );

    let policy = PolicyConfig::new(PolicyKind::WeightedKv, 16).with_sinks(2).with_recent(4);
    let rows = replay_trace(&restored, &policy, 33)?;
    println!("\nreplayed under weightedkv (budget 16); per-head mean divergence:");
    for r in rows.iter().filter(|r| r.metric == "l2_mean") {
        println!("  layer {} head {}: L2 {:.6}", r.layer, r.head, r.value);
    }

    std::fs::remove_file(&path).ok();
    Ok(())
}
