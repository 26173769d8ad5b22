//! Normalized singular value spectra of cached keys vs values.
//!
//! Keys collapse onto few directions while values keep a heavy tail —
//! the asymmetry that motivates evicting keys but merging values. Shown
//! on toy-model traces (averaged over heads) and on a synthetic trace
//! with a planted value rank.
//!
//! ```bash
//! cargo run --example spectrum
//! ```

use weightedkv::harness::{run_spectrum, spectrum_rows, SpectrumConfig};
use weightedkv::toy_model::{synthetic_qkv, SyntheticKind, ToyModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ToyModelConfig::new(2, 4, 16);
    let config = SpectrumConfig::new(model, 128, vec![1]);
    let rows = run_spectrum(&config)?;

    let curve = |prefix: &str| -> Vec<f64> {
        (0..16)
            .map(|i| {
                rows.iter()
                    .find(|r| r.metric == format!("{prefix}_{i}"))
                    .expect("averaged curve present")
                    .value
            })
            .collect()
    };
    let sigma_k = curve("sigma_k_mean");
    let sigma_v = curve("sigma_v_mean");

    println!("toy model, 128 tokens, spectra averaged over 2 layers x 4 heads:");
    println!("{:>6} {:>12} {:>12}", "index", "sigma_k", "sigma_v");
    for i in 0..16 {
        println!("{:>6} {:>12.6} {:>12.6}", i, sigma_k[i], sigma_v[i]);
    }

    let trace = synthetic_qkv(SyntheticKind::LowRankValues { rank: 2, noise: 0.0 }, 64, 8, 1)?;
    let rows = spectrum_rows(&trace, "spectrum", 1)?;
    println!("\nplanted rank-2 value subspace (zero noise), d = 8:");
    for i in 0..8 {
        let v = rows.iter().find(|r| r.metric == format!("sigma_v_{i}")).unwrap().value;
        println!("  sigma_v_{i} = {v:.3e}");
    }
    Ok(())
}
