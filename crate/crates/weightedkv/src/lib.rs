//! KV cache compression via attention-score-weighted value merging.
//!
//! Autoregressive decoding keeps every past key and value in a cache that
//! grows linearly with the sequence. Eviction policies hold the cache at a
//! fixed budget by deleting whole key/value pairs — and permanently lose
//! those tokens. The singular value spectra of the two matrices are not
//! symmetric, though: keys are strongly low-rank while values spread their
//! information across many directions, so deleting values is where the
//! damage happens.
//!
//! The WeightedKV policy implemented here therefore discards only *keys*.
//! The value of a discarded token is folded into its right neighbor by a
//! convex combination weighted by historical average attention scores, a
//! two-term approximation of the exact substitution value that would leave
//! the attention output unchanged (see [`merge::ideal_merge`]).
//!
//! The crate contains:
//!
//! - [`numerics`] — small dense f64 linear algebra: stable softmax, scaled
//!   dot-product scores, Jacobi singular values;
//! - [`attention`] — a single-head cache engine with the score bookkeeping
//!   every policy reads, plus the causal full-attention reference;
//! - [`merge`] — exact and approximate value merging, and the perturbation
//!   metric comparing attention distributions before/after a merge;
//! - [`policy`] — WeightedKV, its pure-eviction ablation, and the FullKV,
//!   StreamingLLM, H2O, TOVA, and CaM baselines under one contract;
//! - [`toy_model`] — seeded random-weight decoder stacks and synthetic
//!   q/k/v generators, so experiments run at desk scale;
//! - [`trace`] — the `.qkv.jsonl` trace format for replaying streams;
//! - [`harness`] — reproducible experiments emitting CSV metrics.
//!
//! Every capability has a runnable example under `examples/`, and the
//! `weightedkv` binary exposes the experiments as CLI subcommands.

pub mod attention;
pub mod harness;
pub mod merge;
pub mod numerics;
pub mod policy;
pub mod rng;
pub mod toy_model;
pub mod trace;

pub use attention::{AttentionStep, CacheState};
pub use merge::MergeWeights;
pub use policy::{CompressionEvent, Policy, PolicyConfig, PolicyKind};
pub use toy_model::{SyntheticKind, ToyModel, ToyModelConfig};
pub use trace::QkvTrace;
