//! Replay the pinned toy compression walkthrough: 8 tokens, budget 4,
//! average attention scores fed from the published table.
//!
//! ```bash
//! cargo run --example golden_trace
//! ```

use weightedkv::harness::run_golden_trace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = run_golden_trace()?;
    for line in report.log_lines() {
        println!("{line}");
    }
    println!();
    println!(
        "the slots for tokens 3 and 6 each blend three original values: {:.6} = 91/36, {:.6} = 91/16",
        report.final_values[0], report.final_values[1]
    );
    Ok(())
}
