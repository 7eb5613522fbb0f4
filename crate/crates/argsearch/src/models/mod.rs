//! Provider abstractions for language models, reward models, and embedders,
//! plus the built-in deterministic toy implementations and the pairwise
//! reward-model trainer.

mod embed;
mod reward;
mod toy;
mod trainer;

pub use embed::{Embedder, HashedBowEmbedder};
pub use reward::{
    fnv1a64, rm_loss_gradient, rm_pairwise_loss, rm_score, sigmoid, FeatureSpec, LexicalReward,
    LinearNgramReward, RewardFormat, RewardModelParams, RewardScore,
};
pub use toy::{TableLm, UniformLm};
pub use trainer::{rm_train, separable_pairs, EpochStats, TrainError, TrainOutcome};

use crate::core::{Context, TokenId, Vocabulary};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque incremental-state handle returned by a language model. Covers a
/// prefix of some context; passing it back lets the provider encode only the
/// uncovered suffix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmState {
    /// Number of context tokens this state covers.
    pub covered: usize,
    /// Provider-specific identifier (remote session id, etc.).
    pub handle: String,
}

/// Next-token distribution. `logprobs` are natural logs; when `full_vocab`
/// is set they cover the whole vocabulary and must sum (in probability) to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmDistribution {
    pub token_ids: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub full_vocab: bool,
}

impl LmDistribution {
    pub fn logprob(&self, token: TokenId) -> Option<f64> {
        self.token_ids
            .iter()
            .position(|&t| t == token)
            .map(|i| self.logprobs[i])
    }
}

/// A distribution plus the new state handle and how many context tokens the
/// provider actually had to encode for this call.
#[derive(Debug, Clone)]
pub struct LmOutput {
    pub dist: LmDistribution,
    pub state: LmState,
    pub encoded_tokens: usize,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("context is empty")]
    EmptyContext,
    #[error("context length {len} exceeds provider maximum {max}")]
    ContextTooLong { len: usize, max: usize },
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("stale state handle: covers {covered} of a context of length {len}")]
    BadState { covered: usize, len: usize },
    #[error("remote provider error: {0}")]
    Remote(#[source] Box<dyn std::error::Error + Send + Sync>),
}

/// A next-token distribution provider with incremental state.
///
/// Contract: when `state` covers a prefix of `ctx`, `encoded_tokens` in the
/// output is exactly the uncovered suffix length, and the returned
/// distribution is identical to encoding from scratch.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;
    fn max_context(&self) -> usize {
        usize::MAX
    }
    fn next_distribution(
        &self,
        ctx: &Context,
        state: Option<&LmState>,
    ) -> Result<LmOutput, ModelError>;

    /// Advances a state over one appended token without computing a new
    /// distribution, so the next call encodes nothing. Providers with
    /// held-out state (remote sessions) override this.
    fn commit_token(&self, state: &LmState, _token: TokenId) -> Result<LmState, ModelError> {
        Ok(LmState {
            covered: state.covered + 1,
            handle: state.handle.clone(),
        })
    }
}

/// A scalar scorer of text. Implementations must be pure: same input,
/// bit-identical output.
pub trait RewardModel: Send + Sync {
    fn score_text(&self, text: &str) -> f64;
}

/// One human-preference comparison: a prompt with a preferred and a
/// less-preferred response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

impl PreferencePair {
    pub fn new(
        prompt: impl Into<String>,
        chosen: impl Into<String>,
        rejected: impl Into<String>,
    ) -> Result<Self, String> {
        let pair = Self {
            prompt: prompt.into(),
            chosen: chosen.into(),
            rejected: rejected.into(),
        };
        if pair.chosen == pair.rejected {
            return Err("chosen and rejected responses must differ".into());
        }
        Ok(pair)
    }
}

/// Operation counters for one decode run. All counts are monotone
/// non-decreasing while the run is in progress.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounters {
    pub lm_calls: u64,
    pub reward_calls: u64,
    pub tokens_encoded_lm: u64,
    pub tokens_encoded_rm: u64,
}
