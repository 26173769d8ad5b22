//! Reproducible experiments over the cache policies, emitting CSV.
//!
//! Every experiment is a pure function of its config: fixing the seeds
//! fixes the output byte-for-byte, regardless of how many worker threads
//! the seed fan-out uses. All metrics land in one flat schema —
//! `experiment,seed,step,layer,head,policy,metric,value` — one scalar per
//! row; anything wider is a consumer concern.
//!
//! Aggregate rows (means, variances) are distinguished by their metric
//! name; rows aggregated *across* seeds carry seed 0 and policy `summary`.

mod experiments;
mod golden;

pub use experiments::{
    replay_trace, run_ideal_check, run_perturbation, run_policy_divergence, run_spectrum,
    spectrum_rows, DivergenceConfig, IdealCheckConfig, PerturbationConfig, SpectrumConfig,
};
pub use golden::{run_golden_trace, GoldenReport};

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::attention::AttentionError;
use crate::merge::MergeError;
use crate::numerics::NumericsError;
use crate::policy::PolicyError;
use crate::toy_model::ToyModelError;
use crate::trace::{fmt_f64, TraceError};

#[derive(Debug)]
pub enum HarnessError {
    Io(io::Error),
    Policy(PolicyError),
    Attention(AttentionError),
    Merge(MergeError),
    Numerics(NumericsError),
    ToyModel(ToyModelError),
    Trace(TraceError),
    InvalidConfig(String),
    SequenceTooShort { steps: usize, needed: usize },
    GoldenMismatch(String),
    NonFiniteMetric { metric: String },
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "i/o: {e}"),
            Self::Policy(e) => write!(f, "{e}"),
            Self::Attention(e) => write!(f, "{e}"),
            Self::Merge(e) => write!(f, "{e}"),
            Self::Numerics(e) => write!(f, "{e}"),
            Self::ToyModel(e) => write!(f, "{e}"),
            Self::Trace(e) => write!(f, "{e}"),
            Self::InvalidConfig(msg) => write!(f, "invalid experiment config: {msg}"),
            Self::SequenceTooShort { steps, needed } => {
                write!(f, "sequence of {steps} steps is shorter than required {needed}")
            }
            Self::GoldenMismatch(msg) => write!(f, "golden trace mismatch: {msg}"),
            Self::NonFiniteMetric { metric } => write!(f, "metric '{metric}' is not finite"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<io::Error> for HarnessError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<PolicyError> for HarnessError {
    fn from(e: PolicyError) -> Self {
        Self::Policy(e)
    }
}

impl From<AttentionError> for HarnessError {
    fn from(e: AttentionError) -> Self {
        Self::Attention(e)
    }
}

impl From<MergeError> for HarnessError {
    fn from(e: MergeError) -> Self {
        Self::Merge(e)
    }
}

impl From<NumericsError> for HarnessError {
    fn from(e: NumericsError) -> Self {
        Self::Numerics(e)
    }
}

impl From<ToyModelError> for HarnessError {
    fn from(e: ToyModelError) -> Self {
        Self::ToyModel(e)
    }
}

impl From<TraceError> for HarnessError {
    fn from(e: TraceError) -> Self {
        Self::Trace(e)
    }
}

/// One scalar measurement keyed by where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub experiment: String,
    pub seed: u64,
    pub step: usize,
    pub layer: usize,
    pub head: usize,
    pub policy: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        experiment: &str,
        seed: u64,
        step: usize,
        layer: usize,
        head: usize,
        policy: &str,
        metric: String,
        value: f64,
    ) -> Result<Self, HarnessError> {
        if !value.is_finite() {
            return Err(HarnessError::NonFiniteMetric { metric });
        }
        Ok(Self {
            experiment: experiment.to_string(),
            seed,
            step,
            layer,
            head,
            policy: policy.to_string(),
            metric,
            value,
        })
    }
}

/// Sorts rows into the canonical emission order, making output independent
/// of worker scheduling.
pub fn sort_rows(rows: &mut [MetricRow]) {
    rows.sort_by(|a, b| {
        (&a.experiment, a.seed, a.step, a.layer, a.head, &a.policy, &a.metric)
            .cmp(&(&b.experiment, b.seed, b.step, b.layer, b.head, &b.policy, &b.metric))
    });
}

/// Writes the mandatory header plus one newline-terminated line per row.
/// Values use 17-significant-digit scientific notation with a `.` decimal
/// separator, so equal rows are equal bytes.
pub fn write_csv<W: Write>(w: &mut W, rows: &[MetricRow]) -> Result<(), HarnessError> {
    writeln!(w, "experiment,seed,step,layer,head,policy,metric,value")?;
    for r in rows {
        if !r.value.is_finite() {
            return Err(HarnessError::NonFiniteMetric { metric: r.metric.clone() });
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.experiment,
            r.seed,
            r.step,
            r.layer,
            r.head,
            r.policy,
            r.metric,
            fmt_f64(r.value)
        )?;
    }
    Ok(())
}

pub fn write_csv_file<P: AsRef<Path>>(path: P, rows: &[MetricRow]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

/// Runs `f` once per seed on a small worker pool and concatenates the
/// results in seed order, so parallelism never changes the output.
pub(crate) fn map_seeds<F>(seeds: &[u64], f: F) -> Result<Vec<MetricRow>, HarnessError>
where
    F: Fn(u64) -> Result<Vec<MetricRow>, HarnessError> + Sync,
{
    if seeds.is_empty() {
        return Err(HarnessError::InvalidConfig("at least one seed is required".into()));
    }
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seeds.len());
    if workers <= 1 {
        let mut all = Vec::new();
        for &seed in seeds {
            all.extend(f(seed)?);
        }
        return Ok(all);
    }
    let chunk = seeds.len().div_ceil(workers);
    let f = &f;
    let per_chunk: Vec<Vec<Result<Vec<MetricRow>, HarnessError>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|chunk_seeds| scope.spawn(move || chunk_seeds.iter().map(|&s| f(s)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
    });
    let mut all = Vec::new();
    for chunk_results in per_chunk {
        for r in chunk_results {
            all.extend(r?);
        }
    }
    Ok(all)
}

/// Population mean, variance, and standard deviation.
pub(crate) fn mean_var_std(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var, var.sqrt())
}
