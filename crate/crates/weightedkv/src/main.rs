//! Command-line front end for the experiment harness.
//!
//! Thin by design: every subcommand parses flags, builds a config, calls
//! the corresponding `harness` function, and writes CSV (or the trace /
//! event log) to `--out`, defaulting to stdout. A `--config` file with
//! `key = value` lines can supply any flag; explicit flags win.

use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use weightedkv::harness::{
    self, DivergenceConfig, IdealCheckConfig, MetricRow, PerturbationConfig, SpectrumConfig,
};
use weightedkv::policy::{PolicyConfig, PolicyKind};
use weightedkv::toy_model::{synthetic_qkv, SyntheticKind, TokenSource, ToyModel, ToyModelConfig};
use weightedkv::trace::QkvTrace;

fn read_token_file(path: &PathBuf) -> Result<Vec<u32>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read tokens from {}: {e}", path.display()))?;
    text.split_whitespace()
        .map(|s| s.parse().map_err(|e| format!("bad token id '{s}': {e}").into()))
        .collect()
}

#[derive(Parser)]
#[command(
    name = "weightedkv",
    about = "KV cache compression experiments: attention-score-weighted value merging vs eviction baselines",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalized singular value spectra of cached keys and values
    Spectrum(SpectrumArgs),
    /// Attention perturbation after a single value merge
    Perturb(PerturbArgs),
    /// Output divergence of compression policies from full attention
    Diverge(DivergeArgs),
    /// Replay the pinned toy compression walkthrough and print its events
    #[command(name = "golden-fig3")]
    GoldenFig3(GoldenArgs),
    /// Ideal-merge exactness grid and approximation-gap sweep
    IdealCheck(IdealCheckArgs),
    /// Generate a .qkv.jsonl trace from the toy model or a synthetic source
    GenTrace(GenTraceArgs),
    /// Replay a .qkv.jsonl trace under one policy and emit divergence CSV
    Replay(ReplayArgs),
}

#[derive(Args, Default)]
struct CommonArgs {
    /// Config file with `key = value` lines mirroring the flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seed list (overrides --seed)
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args, Default)]
struct ModelArgs {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long = "d-head")]
    d_head: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
}

#[derive(Args, Default)]
struct BudgetArgs {
    /// Maximum retained cache slots
    #[arg(long)]
    budget: Option<usize>,
    /// Protected leading tokens
    #[arg(long)]
    sinks: Option<usize>,
    /// Protected trailing tokens
    #[arg(long)]
    recent: Option<usize>,
    /// Spreading window of the probabilistic merge baseline
    #[arg(long = "cam-window")]
    cam_window: Option<usize>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Tokens processed before the merge
    #[arg(long = "merge-step")]
    merge_step: Option<usize>,
    /// Steps measured after the merge
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct DivergeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    steps: Option<usize>,
    /// Comma-separated policies to compare
    #[arg(long, value_delimiter = ',')]
    policy: Option<Vec<String>>,
}

#[derive(Args)]
struct GoldenArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct IdealCheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Points in the descending-attention sweep
    #[arg(long = "sweep-points")]
    sweep_points: Option<usize>,
}

#[derive(Args)]
struct GenTraceArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    steps: Option<usize>,
    /// Trace source: model | isotropic | low-rank | peaked
    #[arg(long)]
    kind: Option<String>,
    /// Value-subspace rank for low-rank traces
    #[arg(long)]
    rank: Option<usize>,
    /// Noise scale for low-rank traces
    #[arg(long)]
    noise: Option<f64>,
    /// Heavy-hitter token index for peaked traces
    #[arg(long)]
    target: Option<usize>,
    /// Token ids from a whitespace-separated file instead of the seeded
    /// stream (model traces only)
    #[arg(long = "tokens-file")]
    tokens_file: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Input .qkv.jsonl trace
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Policy to apply
    #[arg(long)]
    policy: Option<String>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CliError = Box<dyn std::error::Error>;

/// Values from a `--config` file; flags take precedence over these.
struct FileConfig(HashMap<String, String>);

impl FileConfig {
    fn load(path: Option<&PathBuf>) -> Result<Self, CliError> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| format!("config line {} is not `key = value`", lineno + 1))?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self(map))
    }

    fn get<T>(&self, key: &str, cli: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = cli {
            return Ok(v);
        }
        match self.0.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| format!("config key '{key}': {e}").into()),
            None => Ok(default),
        }
    }

    fn get_path(&self, key: &str, cli: Option<PathBuf>) -> Option<PathBuf> {
        cli.or_else(|| self.0.get(key).map(PathBuf::from))
    }

    fn seeds(&self, common: &CommonArgs) -> Result<Vec<u64>, CliError> {
        if let Some(seeds) = &common.seeds {
            return Ok(seeds.clone());
        }
        if let Some(seed) = common.seed {
            return Ok(vec![seed]);
        }
        if let Some(raw) = self.0.get("seeds") {
            return parse_list(raw);
        }
        if let Some(raw) = self.0.get("seed") {
            return Ok(vec![raw.parse().map_err(|e| format!("config key 'seed': {e}"))?]);
        }
        Ok(vec![42])
    }
}

fn parse_list<T>(raw: &str) -> Result<Vec<T>, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    raw.split(',')
        .map(|s| s.trim().parse().map_err(|e| format!("bad list entry '{s}': {e}").into()))
        .collect()
}

fn model_config(file: &FileConfig, args: &ModelArgs) -> Result<ToyModelConfig, CliError> {
    let layers = file.get("layers", args.layers, 4)?;
    let heads = file.get("heads", args.heads, 4)?;
    let d_head = file.get("d-head", args.d_head, 16)?;
    let vocab = file.get("vocab", args.vocab, 256)?;
    Ok(ToyModelConfig::new(layers, heads, d_head).with_vocab(vocab))
}

fn policy_config(
    file: &FileConfig,
    kind: PolicyKind,
    budget_args: &BudgetArgs,
    seed: u64,
) -> Result<PolicyConfig, CliError> {
    let budget = file.get("budget", budget_args.budget, 64)?;
    let sinks = file.get("sinks", budget_args.sinks, 4)?;
    let recent = file.get("recent", budget_args.recent, 16)?;
    let cam_window = file.get("cam-window", budget_args.cam_window, 4)?;
    // the uncompressed reference never evicts, so it gets room for any sequence
    let budget = if kind == PolicyKind::FullKv { usize::MAX } else { budget };
    Ok(PolicyConfig::new(kind, budget)
        .with_sinks(sinks)
        .with_recent(recent)
        .with_seed(seed)
        .with_cam_window(cam_window))
}

fn emit_rows(out: Option<&PathBuf>, rows: &[MetricRow]) -> Result<(), CliError> {
    match out {
        Some(path) => harness::write_csv_file(path, rows)?,
        None => {
            let stdout = io::stdout();
            harness::write_csv(&mut stdout.lock(), rows)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Spectrum(args) => {
            let file = FileConfig::load(args.common.config.as_ref())?;
            let model = model_config(&file, &args.model)?;
            let steps = file.get("steps", args.steps, 256)?;
            let seeds = file.seeds(&args.common)?;
            let rows = harness::run_spectrum(&SpectrumConfig::new(model, steps, seeds))?;
            emit_rows(file.get_path("out", args.common.out).as_ref(), &rows)
        }
        Command::Perturb(args) => {
            let file = FileConfig::load(args.common.config.as_ref())?;
            let model = model_config(&file, &args.model)?;
            let merge_step = file.get("merge-step", args.merge_step, 100)?;
            let window = file.get("window", args.window, 800)?;
            let seeds = file.seeds(&args.common)?;
            let rows = harness::run_perturbation(&PerturbationConfig::new(
                model, merge_step, window, seeds,
            ))?;
            emit_rows(file.get_path("out", args.common.out).as_ref(), &rows)
        }
        Command::Diverge(args) => {
            let file = FileConfig::load(args.common.config.as_ref())?;
            let model = model_config(&file, &args.model)?;
            let steps = file.get("steps", args.steps, 256)?;
            let seeds = file.seeds(&args.common)?;
            let policy_names: Vec<String> = match &args.policy {
                Some(list) => list.clone(),
                None => match file.0.get("policy") {
                    Some(raw) => parse_list(raw)?,
                    None => vec!["weightedkv".into(), "eviction".into()],
                },
            };
            let rng_seed = seeds.first().copied().unwrap_or(0);
            let policies = policy_names
                .iter()
                .map(|name| {
                    let kind: PolicyKind = name.parse()?;
                    policy_config(&file, kind, &args.budget, rng_seed)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let rows = harness::run_policy_divergence(&DivergenceConfig::new(
                model, steps, policies, seeds,
            ))?;
            emit_rows(file.get_path("out", args.common.out).as_ref(), &rows)
        }
        Command::GoldenFig3(args) => {
            let file = FileConfig::load(args.common.config.as_ref())?;
            let report = harness::run_golden_trace()?;
            let mut text = String::new();
            for line in report.log_lines() {
                text.push_str(&line);
                text.push('\n');
            }
            match file.get_path("out", args.common.out) {
                Some(path) => fs::write(path, text)?,
                None => io::stdout().write_all(text.as_bytes())?,
            }
            Ok(())
        }
        Command::IdealCheck(args) => {
            let file = FileConfig::load(args.common.config.as_ref())?;
            let seeds = file.seeds(&args.common)?;
            let mut config = IdealCheckConfig::new(seeds);
            config.sweep_points = file.get("sweep-points", args.sweep_points, 12)?;
            let rows = harness::run_ideal_check(&config)?;
            emit_rows(file.get_path("out", args.common.out).as_ref(), &rows)
        }
        Command::GenTrace(args) => {
            let file = FileConfig::load(args.common.config.as_ref())?;
            let steps = file.get("steps", args.steps, 64)?;
            let seeds = file.seeds(&args.common)?;
            let seed = seeds.first().copied().unwrap_or(42);
            let kind = file.get("kind", args.kind.clone(), "model".to_string())?;
            let tokens_file = file.get_path("tokens-file", args.tokens_file.clone());
            let trace = match kind.as_str() {
                "model" => {
                    let mut model_cfg = model_config(&file, &args.model)?;
                    model_cfg.seed = seed;
                    let vocab = model_cfg.vocab;
                    let tokens = match &tokens_file {
                        Some(path) => {
                            model_cfg.token_source = TokenSource::FileTokens;
                            read_token_file(path)?
                        }
                        None => weightedkv::toy_model::random_token_ids(vocab, steps, seed),
                    };
                    let model = ToyModel::new(model_cfg)?;
                    model.generate_trace(&tokens, None)?
                }
                "isotropic" => {
                    let d = file.get("d-head", args.model.d_head, 16)?;
                    synthetic_qkv(SyntheticKind::IsotropicGaussian, steps, d, seed)?
                }
                "low-rank" => {
                    let d = file.get("d-head", args.model.d_head, 16)?;
                    let rank = file.get("rank", args.rank, 2)?;
                    let noise = file.get("noise", args.noise, 0.0)?;
                    synthetic_qkv(SyntheticKind::LowRankValues { rank, noise }, steps, d, seed)?
                }
                "peaked" => {
                    let d = file.get("d-head", args.model.d_head, 16)?;
                    let target = file.get("target", args.target, 0)?;
                    synthetic_qkv(SyntheticKind::PeakedAttention { target }, steps, d, seed)?
                }
                other => return Err(format!("unknown trace kind '{other}'").into()),
            };
            match file.get_path("out", args.common.out) {
                Some(path) => trace.to_file(path)?,
                None => {
                    let stdout = io::stdout();
                    trace.write_jsonl(&mut stdout.lock())?;
                }
            }
            Ok(())
        }
        Command::Replay(args) => {
            let file = FileConfig::load(args.common.config.as_ref())?;
            let trace_path = file
                .get_path("trace", args.trace)
                .ok_or("replay needs --trace <file.qkv.jsonl>")?;
            let trace = QkvTrace::from_file(&trace_path)?;
            let seeds = file.seeds(&args.common)?;
            let seed = seeds.first().copied().unwrap_or(0);
            let name = file.get("policy", args.policy.clone(), "weightedkv".to_string())?;
            let kind: PolicyKind = name.parse()?;
            let policy = policy_config(&file, kind, &args.budget, seed)?;
            let rows = harness::replay_trace(&trace, &policy, seed)?;
            emit_rows(file.get_path("out", args.common.out).as_ref(), &rows)
        }
    }
}
