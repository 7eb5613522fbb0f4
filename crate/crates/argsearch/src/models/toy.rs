//! Deterministic toy language models: an order-1 Markov table model and a
//! uniform model. Both honor the incremental-state contract so cache tests
//! apply uniformly to local and remote providers.

use super::{LanguageModel, LmDistribution, LmOutput, LmState, ModelError};
use crate::core::{Context, TokenId, Vocabulary};

fn check_state(state: Option<&LmState>, len: usize) -> Result<usize, ModelError> {
    match state {
        None => Ok(0),
        Some(s) if s.covered <= len => Ok(s.covered),
        Some(s) => Err(ModelError::BadState {
            covered: s.covered,
            len,
        }),
    }
}

/// Order-1 Markov model: the next-token distribution depends only on the
/// last context token, via an explicit conditional probability table.
#[derive(Debug, Clone)]
pub struct TableLm {
    vocab: Vocabulary,
    /// `rows[i][j]` = P(token j | last token i). Each row sums to 1.
    rows: Vec<Vec<f64>>,
    max_context: usize,
}

impl TableLm {
    pub fn new(vocab: Vocabulary, rows: Vec<Vec<f64>>) -> Result<Self, String> {
        let n = vocab.len();
        if rows.len() != n {
            return Err(format!("expected {n} rows, got {}", rows.len()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(format!("row {i}: expected {n} entries, got {}", row.len()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(format!("row {i} sums to {sum}, not 1"));
            }
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(format!("row {i} has a negative or non-finite entry"));
            }
        }
        Ok(Self {
            vocab,
            rows,
            max_context: usize::MAX,
        })
    }

    pub fn with_max_context(mut self, max: usize) -> Self {
        self.max_context = max;
        self
    }

    pub fn row(&self, last: TokenId) -> &[f64] {
        &self.rows[last.index()]
    }
}

// ln(0) rows are allowed in a table; clamp to a very negative finite logprob
// so distributions stay finite.
const MIN_LOGPROB: f64 = -745.0;

fn to_logprobs(probs: &[f64]) -> LmDistribution {
    let token_ids = (0..probs.len()).map(|i| TokenId(i as u32)).collect();
    let logprobs = probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { MIN_LOGPROB })
        .collect();
    LmDistribution {
        token_ids,
        logprobs,
        full_vocab: true,
    }
}

impl LanguageModel for TableLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn max_context(&self) -> usize {
        self.max_context
    }

    fn next_distribution(
        &self,
        ctx: &Context,
        state: Option<&LmState>,
    ) -> Result<LmOutput, ModelError> {
        if ctx.is_empty() {
            return Err(ModelError::EmptyContext);
        }
        if ctx.len() > self.max_context {
            return Err(ModelError::ContextTooLong {
                len: ctx.len(),
                max: self.max_context,
            });
        }
        let covered = check_state(state, ctx.len())?;
        let last = *ctx.tokens().last().unwrap();
        if last.index() >= self.vocab.len() {
            return Err(ModelError::UnknownToken(last.0));
        }
        Ok(LmOutput {
            dist: to_logprobs(self.row(last)),
            state: LmState {
                covered: ctx.len(),
                handle: String::new(),
            },
            encoded_tokens: ctx.len() - covered,
        })
    }
}

/// Uniform distribution over the vocabulary regardless of context.
#[derive(Debug, Clone)]
pub struct UniformLm {
    vocab: Vocabulary,
}

impl UniformLm {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl LanguageModel for UniformLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(
        &self,
        ctx: &Context,
        state: Option<&LmState>,
    ) -> Result<LmOutput, ModelError> {
        if ctx.is_empty() {
            return Err(ModelError::EmptyContext);
        }
        let covered = check_state(state, ctx.len())?;
        if let Some(&t) = ctx.tokens().iter().find(|t| t.index() >= self.vocab.len()) {
            return Err(ModelError::UnknownToken(t.0));
        }
        let n = self.vocab.len();
        let p = 1.0 / n as f64;
        Ok(LmOutput {
            dist: to_logprobs(&vec![p; n]),
            state: LmState {
                covered: ctx.len(),
                handle: String::new(),
            },
            encoded_tokens: ctx.len() - covered,
        })
    }
}
