//! Reward-guided decoding: per-token scores that blend a language model's
//! likelihood with a reward model's signal, greedy and stochastic selection
//! over the top-k candidates, baseline decoders, evaluation metrics, a
//! pairwise reward-model trainer, and a benchmark harness. Everything is
//! deterministic given a seed and verifiable against brute-force oracles at
//! desk scale.

pub mod core;
pub mod decode;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod providers;
