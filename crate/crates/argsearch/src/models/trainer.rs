//! Full-batch gradient-descent trainer for the linear reward model.
//! Deterministic given the same inputs; no momentum, no minibatching.

use super::reward::{rm_loss_gradient, rm_pairwise_loss, LinearNgramReward, RewardFormat};
use super::{PreferencePair, RewardModel, RewardModelParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of pairs where the chosen response outscores the rejected one.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: RewardModelParams,
    pub trace: Vec<EpochStats>,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training pairs")]
    NoPairs,
    #[error("invalid params: {0}")]
    BadParams(String),
    #[error("non-finite loss {loss} at epoch {epoch}; last finite mean loss {last_finite:?}")]
    NonFiniteLoss {
        epoch: usize,
        loss: f64,
        last_finite: Option<f64>,
    },
}

fn epoch_stats(
    rm: &LinearNgramReward,
    fmt: &RewardFormat,
    pairs: &[PreferencePair],
    epoch: usize,
) -> EpochStats {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for pair in pairs {
        loss_sum += rm_pairwise_loss(rm, fmt, pair);
        let r_w = rm.score_text(&fmt.apply(&pair.prompt, &pair.chosen));
        let r_l = rm.score_text(&fmt.apply(&pair.prompt, &pair.rejected));
        if r_w > r_l {
            correct += 1;
        }
    }
    EpochStats {
        epoch,
        mean_loss: loss_sum / pairs.len() as f64,
        accuracy: correct as f64 / pairs.len() as f64,
    }
}

/// Trains `init` on `pairs` for `epochs` full-batch steps at `learning_rate`.
/// The trace records mean loss and pairwise accuracy after each epoch
/// (entry 0 is the pre-training state). `seed` is recorded for provenance;
/// full-batch descent itself draws no randomness.
pub fn rm_train(
    init: RewardModelParams,
    fmt: &RewardFormat,
    pairs: &[PreferencePair],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }
    let mut rm = LinearNgramReward::new(init).map_err(TrainError::BadParams)?;
    let width = rm.params.theta.len();
    let mut trace = vec![epoch_stats(&rm, fmt, pairs, 0)];

    for epoch in 1..=epochs {
        let mut grad = vec![0.0; width];
        for pair in pairs {
            let g = rm_loss_gradient(&rm, fmt, pair);
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        let scale = learning_rate / pairs.len() as f64;
        for (t, g) in rm.params.theta.iter_mut().zip(&grad) {
            *t -= scale * g;
        }
        let stats = epoch_stats(&rm, fmt, pairs, epoch);
        if !stats.mean_loss.is_finite() {
            let last_finite = trace
                .iter()
                .rev()
                .find(|s| s.mean_loss.is_finite())
                .map(|s| s.mean_loss);
            return Err(TrainError::NonFiniteLoss {
                epoch,
                loss: stats.mean_loss,
                last_finite,
            });
        }
        trace.push(stats);
    }

    Ok(TrainOutcome {
        params: rm.params,
        trace,
        seed,
    })
}

/// A linearly separable synthetic preference set: every chosen response
/// contains `marker`, no rejected response does.
pub fn separable_pairs(marker: &str, n: usize) -> Vec<PreferencePair> {
    let fillers = ["one", "two", "three", "four", "five", "six", "seven"];
    (0..n)
        .map(|i| {
            let a = fillers[i % fillers.len()];
            let b = fillers[(i + 3) % fillers.len()];
            PreferencePair {
                prompt: format!("question {i}"),
                chosen: format!("{a} {marker} {b}"),
                rejected: format!("{b} plain {a}"),
            }
        })
        .collect()
}
