//! Deterministic sources of query/key/value streams.
//!
//! A [`ToyModel`] is a small decoder-only stack with seeded random weights:
//! no training, no tokenizer, no pretrained checkpoints. Its purpose is
//! structural — producing position-sensitive attention patterns whose
//! divergence under cache compression can be measured against the full
//! attention reference. [`synthetic_qkv`] builds single-head traces with
//! controlled structure (known value rank, a guaranteed heavy hitter).
//!
//! Per decode step and layer, with `x` the residual stream:
//!
//! 1. `x_n = x / rms(x)` — activations are RMS-scaled before each sublayer
//!    so attention logits stay at unit scale across depth;
//! 2. per head: `q = Wq x_n`, `k = Wk x_n`, `v = Wv x_n`, then `q` and `k`
//!    are rotated pairwise by the token position (see [`apply_rotary`]);
//! 3. each head appends (k, v) to its cache, attends with `q`, and the
//!    active policy may compress the cache;
//! 4. `x += concat(head outputs)`, then `x += tanh(Wf (x / rms(x)))`.
//!
//! Traces record the rotated projections, so replaying a trace through a
//! bare cache reproduces the in-model attention exactly.

use std::fmt;

use crate::attention::{AttentionError, CacheState};
use crate::numerics::{Mat, NumericsError};
use crate::policy::{CompressionEvent, Policy, PolicyConfig, PolicyError};
use crate::rng::SplitMix64;
use crate::trace::{QkvRecord, QkvTrace, TraceError};

#[derive(Debug)]
pub enum ToyModelError {
    InvalidConfig(String),
    TokenOutOfVocab { token: u32, vocab: usize },
    EmptyTokenStream,
    Policy(PolicyError),
    Attention(AttentionError),
    Numerics(NumericsError),
    Trace(TraceError),
}

impl fmt::Display for ToyModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidConfig(msg) => write!(f, "invalid model config: {msg}"),
            Self::TokenOutOfVocab { token, vocab } => {
                write!(f, "token id {token} outside vocab of {vocab}")
            }
            Self::EmptyTokenStream => write!(f, "token stream is empty"),
            Self::Policy(e) => write!(f, "{e}"),
            Self::Attention(e) => write!(f, "{e}"),
            Self::Numerics(e) => write!(f, "{e}"),
            Self::Trace(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ToyModelError {}

impl From<PolicyError> for ToyModelError {
    fn from(e: PolicyError) -> Self {
        Self::Policy(e)
    }
}

impl From<AttentionError> for ToyModelError {
    fn from(e: AttentionError) -> Self {
        Self::Attention(e)
    }
}

impl From<NumericsError> for ToyModelError {
    fn from(e: NumericsError) -> Self {
        Self::Numerics(e)
    }
}

impl From<TraceError> for ToyModelError {
    fn from(e: TraceError) -> Self {
        Self::Trace(e)
    }
}

/// Where the experiment harness obtains token ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenSource {
    #[default]
    RandomTokens,
    FileTokens,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_head: usize,
    pub vocab: usize,
    pub seed: u64,
    pub token_source: TokenSource,
}

impl ToyModelConfig {
    pub fn new(layers: usize, heads: usize, d_head: usize) -> Self {
        Self { layers, heads, d_head, vocab: 256, seed: 0, token_source: TokenSource::RandomTokens }
    }

    pub fn with_vocab(mut self, vocab: usize) -> Self {
        self.vocab = vocab;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Embedding width; always `heads * d_head`.
    pub fn d_model(&self) -> usize {
        self.heads * self.d_head
    }

    pub fn validate(&self) -> Result<(), ToyModelError> {
        if self.layers == 0 || self.heads == 0 || self.d_head == 0 || self.vocab == 0 {
            return Err(ToyModelError::InvalidConfig(
                "layers, heads, d_head, and vocab must all be at least 1".into(),
            ));
        }
        Ok(())
    }
}

struct LayerWeights {
    // per head, d_head x d_model
    wq: Vec<Mat>,
    wk: Vec<Mat>,
    wv: Vec<Mat>,
    // d_model x d_model
    wf: Mat,
}

/// Random-weight decoder stack. Weights are drawn once at construction in
/// a fixed order (embedding, then per layer: per head Wq, Wk, Wv, then
/// Wf), so equal seeds give bit-identical models.
pub struct ToyModel {
    config: ToyModelConfig,
    // vocab x d_model, unit-variance entries
    embedding: Mat,
    layers: Vec<LayerWeights>,
}

fn gaussian_mat(rng: &mut SplitMix64, rows: usize, cols: usize, std: f64) -> Mat {
    let mut m = Mat::with_cols(cols);
    for _ in 0..rows {
        let row: Vec<f64> = (0..cols).map(|_| rng.next_gaussian() * std).collect();
        m.push_row(&row).expect("gaussian row is finite");
    }
    m
}

impl ToyModel {
    /// Builds the model; projection and feed-forward weights have standard
    /// deviation `1 / sqrt(d_model)`, embeddings are unit variance.
    pub fn new(config: ToyModelConfig) -> Result<Self, ToyModelError> {
        config.validate()?;
        let d_model = config.d_model();
        let std = 1.0 / (d_model as f64).sqrt();
        let mut rng = SplitMix64::new(config.seed);
        let embedding = gaussian_mat(&mut rng, config.vocab, d_model, 1.0);
        let layers = (0..config.layers)
            .map(|_| {
                let mut wq = Vec::with_capacity(config.heads);
                let mut wk = Vec::with_capacity(config.heads);
                let mut wv = Vec::with_capacity(config.heads);
                for _ in 0..config.heads {
                    wq.push(gaussian_mat(&mut rng, config.d_head, d_model, std));
                    wk.push(gaussian_mat(&mut rng, config.d_head, d_model, std));
                    wv.push(gaussian_mat(&mut rng, config.d_head, d_model, std));
                }
                let wf = gaussian_mat(&mut rng, d_model, d_model, std);
                LayerWeights { wq, wk, wv, wf }
            })
            .collect();
        Ok(Self { config, embedding, layers })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn embedding(&self) -> &Mat {
        &self.embedding
    }

    pub fn wq(&self, layer: usize, head: usize) -> &Mat {
        &self.layers[layer].wq[head]
    }

    pub fn wk(&self, layer: usize, head: usize) -> &Mat {
        &self.layers[layer].wk[head]
    }

    pub fn wv(&self, layer: usize, head: usize) -> &Mat {
        &self.layers[layer].wv[head]
    }

    /// Full decode over `token_ids`, producing the per-head trace, the
    /// final layer's concatenated attention output per step, and every
    /// compression event the policy took.
    ///
    /// With `policy: None` (or an unlimited budget) attention is exact
    /// causal full attention.
    pub fn decode(
        &self,
        token_ids: &[u32],
        policy: Option<&PolicyConfig>,
    ) -> Result<DecodeRun, ToyModelError> {
        if token_ids.is_empty() {
            return Err(ToyModelError::EmptyTokenStream);
        }
        for &t in token_ids {
            if t as usize >= self.config.vocab {
                return Err(ToyModelError::TokenOutOfVocab { token: t, vocab: self.config.vocab });
            }
        }
        let cfg = &self.config;
        let d_model = cfg.d_model();
        let steps = token_ids.len();

        let mut caches: Vec<Vec<CacheState>> = (0..cfg.layers)
            .map(|_| (0..cfg.heads).map(|_| CacheState::new(cfg.d_head)).collect())
            .collect();
        let mut policies: Vec<Vec<Option<Policy>>> = (0..cfg.layers)
            .map(|layer| {
                (0..cfg.heads)
                    .map(|head| {
                        policy
                            .map(|p| {
                                // each head owns an independent draw stream
                                let mut per_head = p.clone();
                                let stream = (layer * cfg.heads + head) as u64;
                                per_head.rng_seed =
                                    SplitMix64::with_stream(p.rng_seed, stream).next_u64();
                                Policy::new(per_head)
                            })
                            .transpose()
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut trace = QkvTrace::zeroed(steps, cfg.layers, cfg.heads, cfg.d_head);
        let mut final_attention = Vec::with_capacity(steps);
        let mut events = Vec::new();

        for (step, &token) in token_ids.iter().enumerate() {
            let mut x = self.embedding.row(token as usize).to_vec();
            let mut last_attn = vec![0.0; d_model];
            for layer in 0..cfg.layers {
                let weights = &self.layers[layer];
                let x_norm = rms_scale(&x);
                let mut attn = vec![0.0; d_model];
                for head in 0..cfg.heads {
                    let mut q = weights.wq[head].mul_vec(&x_norm)?;
                    let mut k = weights.wk[head].mul_vec(&x_norm)?;
                    let v = weights.wv[head].mul_vec(&x_norm)?;
                    apply_rotary(&mut q, step);
                    apply_rotary(&mut k, step);

                    let cache = &mut caches[layer][head];
                    cache.append(&k, &v, step)?;
                    let out = cache.attend(&q)?;
                    if let Some(p) = policies[layer][head].as_mut() {
                        if let Some(event) = p.enforce_budget(cache, &out.weights)? {
                            events.push(HeadEvent { layer, head, event });
                        }
                    }
                    trace.set(step, layer, head, QkvRecord { q, k, v })?;
                    attn[head * cfg.d_head..(head + 1) * cfg.d_head].copy_from_slice(&out.output);
                }
                for (xi, a) in x.iter_mut().zip(&attn) {
                    *xi += a;
                }
                let ff_in = rms_scale(&x);
                let ff = weights.wf.mul_vec(&ff_in)?;
                for (xi, f) in x.iter_mut().zip(&ff) {
                    *xi += f.tanh();
                }
                if layer + 1 == cfg.layers {
                    last_attn = attn;
                }
            }
            trace.set_token_id(step, token);
            final_attention.push(last_attn);
        }
        Ok(DecodeRun { trace, final_attention, events })
    }

    /// The q/k/v stream of a decode; see [`ToyModel::decode`].
    pub fn generate_trace(
        &self,
        token_ids: &[u32],
        policy: Option<&PolicyConfig>,
    ) -> Result<QkvTrace, ToyModelError> {
        Ok(self.decode(token_ids, policy)?.trace)
    }
}

/// Everything one decode produces.
pub struct DecodeRun {
    pub trace: QkvTrace,
    /// Concatenated multi-head attention output of the last layer, one
    /// `d_model` vector per step, before the residual add.
    pub final_attention: Vec<Vec<f64>>,
    pub events: Vec<HeadEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadEvent {
    pub layer: usize,
    pub head: usize,
    pub event: CompressionEvent,
}

/// Scales a vector to unit root-mean-square (plus a small epsilon so the
/// zero vector maps to itself).
pub fn rms_scale(x: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let rms = (ms + 1e-12).sqrt();
    x.iter().map(|v| v / rms).collect()
}

/// Rotates coordinate pairs `(2p, 2p+1)` of `v` by `pos * theta_p` with
/// `theta_p = 10000^(-2p / len)`. A trailing unpaired coordinate is left
/// unrotated. Gives position-sensitive attention without parameters.
pub fn apply_rotary(v: &mut [f64], pos: usize) {
    let d = v.len();
    let pairs = d / 2;
    for p in 0..pairs {
        let theta = 10000.0_f64.powf(-2.0 * p as f64 / d as f64);
        let angle = pos as f64 * theta;
        let (sin, cos) = angle.sin_cos();
        let a = v[2 * p];
        let b = v[2 * p + 1];
        v[2 * p] = a * cos - b * sin;
        v[2 * p + 1] = a * sin + b * cos;
    }
}

/// Seeded uniform token ids in `[0, vocab)`.
pub fn random_token_ids(vocab: usize, steps: usize, seed: u64) -> Vec<u32> {
    let mut rng = SplitMix64::with_stream(seed, 0x746f_6b65_6e73);
    (0..steps).map(|_| rng.next_below(vocab as u64) as u32).collect()
}

/// Structure of a synthetic single-head trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticKind {
    /// Independent standard normal q, k, v at every step.
    IsotropicGaussian,
    /// Values drawn from a `rank`-dimensional subspace plus `noise` times
    /// a standard normal vector; keys and queries stay isotropic.
    LowRankValues { rank: usize, noise: f64 },
    /// Keys are constructed so the token at `target` receives at least
    /// half the attention mass from every later query under full
    /// attention: the target key is a large multiple of the first basis
    /// vector, other keys have no first component and bounded noise, and
    /// queries point along the first basis vector.
    PeakedAttention { target: usize },
}

/// Single-layer, single-head synthetic trace of the given structure.
pub fn synthetic_qkv(
    kind: SyntheticKind,
    steps: usize,
    d: usize,
    seed: u64,
) -> Result<QkvTrace, ToyModelError> {
    if steps == 0 || d == 0 {
        return Err(ToyModelError::InvalidConfig("steps and d must be at least 1".into()));
    }
    let mut rng = SplitMix64::with_stream(seed, 0x7173_796e);
    let mut trace = QkvTrace::zeroed(steps, 1, 1, d);

    match kind {
        SyntheticKind::IsotropicGaussian => {
            for step in 0..steps {
                let rec = QkvRecord {
                    q: rng.gaussian_vec(d),
                    k: rng.gaussian_vec(d),
                    v: rng.gaussian_vec(d),
                };
                trace.set(step, 0, 0, rec)?;
            }
        }
        SyntheticKind::LowRankValues { rank, noise } => {
            if rank == 0 || rank > d {
                return Err(ToyModelError::InvalidConfig(format!(
                    "value rank {rank} must be in 1..={d}"
                )));
            }
            if noise < 0.0 || noise.is_nan() {
                return Err(ToyModelError::InvalidConfig("noise must be non-negative".into()));
            }
            let basis: Vec<Vec<f64>> = (0..rank).map(|_| rng.gaussian_vec(d)).collect();
            for step in 0..steps {
                let q = rng.gaussian_vec(d);
                let k = rng.gaussian_vec(d);
                let coeffs: Vec<f64> = (0..rank).map(|_| rng.next_gaussian()).collect();
                let mut v = vec![0.0; d];
                for (c, b) in coeffs.iter().zip(&basis) {
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi += c * bi;
                    }
                }
                if noise > 0.0 {
                    for vi in v.iter_mut() {
                        *vi += noise * rng.next_gaussian();
                    }
                }
                trace.set(step, 0, 0, QkvRecord { q, k, v })?;
            }
        }
        SyntheticKind::PeakedAttention { target } => {
            if target >= steps {
                return Err(ToyModelError::InvalidConfig(format!(
                    "target {target} must be below steps {steps}"
                )));
            }
            // Worst-case off-target logit magnitude, used to size the
            // target logit so dominance is guaranteed, not just likely.
            let bound = 0.1 * (d.saturating_sub(1)) as f64 / (d as f64).sqrt();
            let alpha = 2.0 * (d as f64).sqrt() * ((steps as f64).ln() + 1.0 + bound);
            for step in 0..steps {
                let mut q = vec![0.0; d];
                q[0] = 0.5 + rng.next_unit();
                for qi in q.iter_mut().skip(1) {
                    *qi = 0.1 * rng.next_symmetric();
                }
                let mut k = vec![0.0; d];
                if step == target {
                    k[0] = alpha;
                } else {
                    for ki in k.iter_mut().skip(1) {
                        *ki = rng.next_symmetric();
                    }
                }
                let v = rng.gaussian_vec(d);
                trace.set(step, 0, 0, QkvRecord { q, k, v })?;
            }
        }
    }
    Ok(trace)
}
