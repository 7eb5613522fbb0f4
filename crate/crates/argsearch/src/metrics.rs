//! Automatic evaluation metrics over generation corpora: average reward,
//! n-gram diversity, and prompt/continuation coherence.

use crate::core::{GenerationRecord, TokenId};
use crate::models::{Embedder, RewardFormat, RewardModel};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Per-generation metric values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub reward: f64,
    pub diversity: f64,
    pub coherence: f64,
}

/// Corpus-level aggregates; each is the arithmetic mean of the per-item
/// values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub average_reward: f64,
    pub diversity: f64,
    pub coherence: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_item: Option<Vec<ItemMetrics>>,
    /// Set when any continuation was too short for all n-gram orders or any
    /// embedding degenerated to the zero vector.
    pub degenerate_inputs: usize,
}

/// Mean reward-model score over formatted (prompt, continuation)
/// transcripts, using the same reward model that guided decoding.
pub fn average_reward(
    rm: &dyn RewardModel,
    fmt: &RewardFormat,
    generations: &[GenerationRecord],
) -> f64 {
    assert!(!generations.is_empty(), "empty corpus");
    let total: f64 = generations
        .iter()
        .map(|g| rm.score_text(&fmt.apply(&g.prompt_text, &g.continuation_text)))
        .sum();
    total / generations.len() as f64
}

fn unique_ratio(tokens: &[TokenId], n: usize) -> Option<f64> {
    if tokens.len() < n {
        return None;
    }
    let total = tokens.len() - n + 1;
    let unique = tokens.windows(n).collect::<HashSet<_>>().len();
    Some(unique as f64 / total as f64)
}

/// Product over n = 2..4 of unique-to-total n-gram ratios. Orders with no
/// n-grams contribute factor 1; sequences shorter than 2 tokens score 1 by
/// convention.
pub fn diversity(tokens: &[TokenId]) -> f64 {
    (2..=4)
        .filter_map(|n| unique_ratio(tokens, n))
        .product()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine similarity between the sentence embeddings of the raw prompt and
/// raw continuation texts. Empty input embeds to zero and scores 0.
pub fn coherence(embedder: &dyn Embedder, prompt: &str, continuation: &str) -> f64 {
    cosine(&embedder.embed(prompt), &embedder.embed(continuation))
}

/// Computes all three metrics per item and their means.
pub fn build_report(
    rm: &dyn RewardModel,
    fmt: &RewardFormat,
    embedder: &dyn Embedder,
    generations: &[GenerationRecord],
    keep_per_item: bool,
) -> EvalReport {
    assert!(!generations.is_empty(), "empty corpus");
    let mut items = Vec::with_capacity(generations.len());
    let mut degenerate = 0usize;
    for g in generations {
        let tokens = g.context.generated_tokens();
        if tokens.len() < 5 || g.continuation_text.is_empty() || g.prompt_text.is_empty() {
            degenerate += 1;
        }
        items.push(ItemMetrics {
            reward: rm.score_text(&fmt.apply(&g.prompt_text, &g.continuation_text)),
            diversity: diversity(tokens),
            coherence: coherence(embedder, &g.prompt_text, &g.continuation_text),
        });
    }
    let n = items.len() as f64;
    EvalReport {
        average_reward: items.iter().map(|i| i.reward).sum::<f64>() / n,
        diversity: items.iter().map(|i| i.diversity).sum::<f64>() / n,
        coherence: items.iter().map(|i| i.coherence).sum::<f64>() / n,
        n: items.len(),
        degenerate_inputs: degenerate,
        per_item: keep_per_item.then_some(items),
    }
}

/// One benchmark result row: configuration plus report aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub w: f64,
    pub k: usize,
    pub tau: f64,
    pub average_reward: f64,
    pub diversity: f64,
    pub coherence: f64,
    pub n: usize,
}

pub const CSV_HEADER: &str = "method,w,k,tau,average_reward,diversity,coherence,n";

impl ReportRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method,
            self.w,
            self.k,
            self.tau,
            self.average_reward,
            self.diversity,
            self.coherence,
            self.n
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{Context, Method};
    use crate::models::{CostCounters, HashedBowEmbedder, LexicalReward};

    fn record(prompt: &str, continuation: &str, tokens: Vec<TokenId>) -> GenerationRecord {
        let prompt_tokens = vec![TokenId(0)];
        let mut ctx = Context::from_prompt(prompt_tokens);
        for t in &tokens {
            ctx.push(*t);
        }
        GenerationRecord {
            prompt_text: prompt.into(),
            continuation_text: continuation.into(),
            context: ctx,
            traces: Vec::new(),
            counters: CostCounters::default(),
            method: Method::Greedy,
            k: 1,
            used_cache: true,
        }
    }

    fn toks(ids: &[u32]) -> Vec<TokenId> {
        ids.iter().map(|&i| TokenId(i)).collect()
    }

    #[test]
    fn diversity_all_distinct_is_one() {
        assert_eq!(diversity(&toks(&[1, 2, 3, 4, 5])), 1.0);
    }

    #[test]
    fn diversity_all_repeat_length5() {
        let d = diversity(&toks(&[7, 7, 7, 7, 7]));
        assert!((d - 1.0 / 24.0).abs() <= 1e-12);
    }

    #[test]
    fn diversity_alternating_pattern() {
        // a b a b a b: 2-grams 2/5, 3-grams 2/4, 4-grams 2/3.
        let d = diversity(&toks(&[0, 1, 0, 1, 0, 1]));
        assert!((d - 2.0 / 15.0).abs() <= 1e-12);
    }

    #[test]
    fn diversity_short_input_conventions() {
        assert_eq!(diversity(&toks(&[1])), 1.0);
        assert_eq!(diversity(&[]), 1.0);
        // Length 3: only 2- and 3-gram factors exist.
        assert_eq!(diversity(&toks(&[5, 5, 5])), 0.5);
    }

    #[test]
    fn diversity_invariant_under_token_renaming() {
        let a = toks(&[0, 1, 1, 2, 0, 1]);
        let renamed = toks(&[10, 21, 21, 32, 10, 21]);
        assert_eq!(diversity(&a), diversity(&renamed));
    }

    #[test]
    fn coherence_identical_texts() {
        let e = HashedBowEmbedder::default();
        let c = coherence(&e, "same words here", "same words here");
        assert!((c - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn coherence_empty_input_is_zero() {
        let e = HashedBowEmbedder::default();
        assert_eq!(coherence(&e, "", "something"), 0.0);
    }

    #[test]
    fn coherence_symmetric_and_scale_invariant() {
        struct Scaled(HashedBowEmbedder, f64);
        impl Embedder for Scaled {
            fn embed(&self, text: &str) -> Vec<f64> {
                self.0.embed(text).into_iter().map(|x| x * self.1).collect()
            }
            fn dim(&self) -> usize {
                self.0.dim()
            }
        }
        let e = HashedBowEmbedder::default();
        let s = Scaled(HashedBowEmbedder::default(), 3.5);
        let (a, b) = ("one two three", "two four");
        assert!((coherence(&e, a, b) - coherence(&e, b, a)).abs() <= 1e-15);
        assert!((coherence(&e, a, b) - coherence(&s, a, b)).abs() <= 1e-12);
    }

    #[test]
    fn coherence_matches_manual_cosine() {
        let e = HashedBowEmbedder::default();
        let (p, c) = ("alpha beta gamma", "beta gamma delta");
        let va = e.embed(p);
        let vb = e.embed(c);
        let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        let manual = dot
            / (va.iter().map(|x| x * x).sum::<f64>().sqrt()
                * vb.iter().map(|x| x * x).sum::<f64>().sqrt());
        assert!((coherence(&e, p, c) - manual).abs() <= 1e-12);
    }

    #[test]
    fn average_reward_is_arithmetic_mean() {
        let rm = LexicalReward::new("hit", 1.0);
        let fmt = RewardFormat::raw();
        // "p hit" -> 1/2, "p hit hit hit" -> 3/4.
        let gens = vec![
            record("p", "hit", toks(&[1])),
            record("p", "hit hit hit", toks(&[1, 1, 1])),
        ];
        let avg = average_reward(&rm, &fmt, &gens);
        assert!((avg - (0.5 + 0.75) / 2.0).abs() <= 1e-12);
        let single = average_reward(&rm, &fmt, &gens[..1]);
        assert!((single - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn report_aggregates_equal_means_of_per_item() {
        let rm = LexicalReward::new("hit", 2.0);
        let fmt = RewardFormat::raw();
        let e = HashedBowEmbedder::default();
        let gens = vec![
            record("a b", "hit c d e f", toks(&[1, 2, 3, 4, 5])),
            record("x y", "hit hit hit hit hit", toks(&[1, 1, 1, 1, 1])),
        ];
        let report = build_report(&rm, &fmt, &e, &gens, true);
        let items = report.per_item.as_ref().unwrap();
        assert_eq!(items.len(), 2);
        let mean = |f: fn(&ItemMetrics) -> f64| {
            items.iter().map(f).sum::<f64>() / items.len() as f64
        };
        assert!((report.average_reward - mean(|i| i.reward)).abs() <= 1e-12);
        assert!((report.diversity - mean(|i| i.diversity)).abs() <= 1e-12);
        assert!((report.coherence - mean(|i| i.coherence)).abs() <= 1e-12);

        let no_items = build_report(&rm, &fmt, &e, &gens, false);
        assert!(no_items.per_item.is_none());
        assert_eq!(no_items.average_reward, report.average_reward);
    }

    #[test]
    fn singleton_report_equals_item_values() {
        let rm = LexicalReward::new("hit", 1.0);
        let e = HashedBowEmbedder::default();
        let gens = vec![record("q", "hit a b c d", toks(&[9, 2, 3, 4, 5]))];
        let report = build_report(&rm, &RewardFormat::raw(), &e, &gens, true);
        let item = report.per_item.as_ref().unwrap()[0];
        assert_eq!(report.average_reward, item.reward);
        assert_eq!(report.diversity, item.diversity);
        assert_eq!(report.coherence, item.coherence);
    }
}
