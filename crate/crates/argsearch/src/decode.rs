//! The reward-guided decoding engine: candidate scoring, greedy and
//! stochastic selection, the main decode loop with incremental-state
//! accounting, and the comparison baselines (greedy, top-k, nucleus,
//! contrastive).

use crate::core::{
    validate_config, CandidateScore, ConfigError, Context, DecodeConfig, GenerationRecord,
    LikelihoodMode, Method, StepTrace, TokenId, Vocabulary,
};
use crate::models::{
    CostCounters, Embedder, LanguageModel, LmDistribution, LmState, ModelError, RewardFormat,
    RewardModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The k most likely tokens at a step, sorted by logprob descending, ties by
/// TokenId ascending. The global argmax is always first.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKSet {
    pub candidates: Vec<(TokenId, f64)>,
}

impl TopKSet {
    pub fn from_distribution(dist: &LmDistribution, k: usize) -> Self {
        let mut all: Vec<(TokenId, f64)> = dist
            .token_ids
            .iter()
            .copied()
            .zip(dist.logprobs.iter().copied())
            .collect();
        all.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        all.truncate(k);
        Self { candidates: all }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Outcome of a token selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub token: TokenId,
    pub method: Method,
    /// Selection probability; present iff the method is stochastic.
    pub probability: Option<f64>,
    /// Uniform draw in [0, 1) consumed by a stochastic selection.
    pub rng_draw: Option<f64>,
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("prompt length {len} exceeds max_prompt_tokens {max}")]
    PromptTooLong { len: usize, max: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("method {method} requires a {missing} provider")]
    MissingProvider { method: Method, missing: &'static str },
    #[error("model error at step {step}: {source}")]
    Model {
        step: usize,
        #[source]
        source: ModelError,
        /// Trace of the steps completed before the failure.
        partial: Box<GenerationRecord>,
    },
}

/// RNG for sequence `index` of a run: one named generator, one stream per
/// sequence, so corpus results are independent of execution order.
pub fn sequence_rng(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Softmax of `values / tau` with max-subtraction. Sums to 1 up to
/// rounding; invariant under a constant shift of the values.
pub fn stable_softmax(values: &[f64], tau: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn lm_term(logprob: f64, mode: LikelihoodMode) -> f64 {
    match mode {
        LikelihoodMode::Probability => logprob.exp(),
        LikelihoodMode::LogProbability => logprob,
    }
}

/// Combined score for every top-k candidate: `lm_term + w * reward`, where
/// the reward is taken on the formatted transcript extended by the
/// candidate token. Adds exactly `k` reward calls to the counters.
#[allow(clippy::too_many_arguments)]
pub fn score_candidates(
    vocab: &Vocabulary,
    fmt: &RewardFormat,
    prompt_text: &str,
    generated: &[TokenId],
    topk: &TopKSet,
    rm: &dyn RewardModel,
    w: f64,
    mode: LikelihoodMode,
    counters: &mut CostCounters,
) -> Vec<CandidateScore> {
    let mut continuation: Vec<TokenId> = generated.to_vec();
    topk.candidates
        .iter()
        .map(|&(token, logprob)| {
            continuation.push(token);
            let text = fmt.apply(prompt_text, &vocab.decode(&continuation));
            continuation.pop();
            counters.reward_calls += 1;
            counters.tokens_encoded_rm += text.split_whitespace().count() as u64;
            let reward = rm.score_text(&text);
            let lm = lm_term(logprob, mode);
            CandidateScore {
                token,
                lm_term: lm,
                reward,
                score: lm + w * reward,
            }
        })
        .collect()
}

/// Argmax over combined scores; ties broken by lowest TokenId.
pub fn select_greedy(scores: &[CandidateScore]) -> SelectionOutcome {
    debug_assert!(!scores.is_empty());
    let mut best = &scores[0];
    for c in &scores[1..] {
        if c.score > best.score || (c.score == best.score && c.token < best.token) {
            best = c;
        }
    }
    SelectionOutcome {
        token: best.token,
        method: Method::ArgsGreedy,
        probability: None,
        rng_draw: None,
    }
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha12Rng) -> (usize, f64) {
    let draw: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return (i, draw);
        }
    }
    (probs.len() - 1, draw)
}

/// Samples a candidate with probability `exp(score/tau)` renormalized over
/// the candidate set.
pub fn select_stochastic(
    scores: &[CandidateScore],
    tau: f64,
    rng: &mut ChaCha12Rng,
) -> SelectionOutcome {
    debug_assert!(!scores.is_empty());
    let values: Vec<f64> = scores.iter().map(|c| c.score).collect();
    let probs = stable_softmax(&values, tau);
    let (idx, draw) = sample_categorical(&probs, rng);
    SelectionOutcome {
        token: scores[idx].token,
        method: Method::ArgsStochastic,
        probability: Some(probs[idx]),
        rng_draw: Some(draw),
    }
}

/// Per-step selection logic; the loop in [`decode_loop`] handles context
/// growth, state, counters, and tracing for every method.
trait StepPolicy {
    fn choose(
        &mut self,
        dist: &LmDistribution,
        generated: &[TokenId],
        counters: &mut CostCounters,
        rng: &mut ChaCha12Rng,
    ) -> (Vec<CandidateScore>, SelectionOutcome);
}

struct LoopSetup<'a> {
    lm: &'a dyn LanguageModel,
    prompt: &'a Context,
    cfg: &'a DecodeConfig,
}

fn decode_loop(
    setup: LoopSetup<'_>,
    policy: &mut dyn StepPolicy,
    rng: &mut ChaCha12Rng,
) -> Result<GenerationRecord, DecodeError> {
    let LoopSetup { lm, prompt, cfg } = setup;
    validate_config(cfg, lm.vocab().len())?;
    if prompt.len() > cfg.max_prompt_tokens {
        return Err(DecodeError::PromptTooLong {
            len: prompt.len(),
            max: cfg.max_prompt_tokens,
        });
    }
    let vocab = lm.vocab();
    let prompt_text = vocab.decode(prompt.tokens());
    let mut ctx = prompt.clone();
    let mut counters = CostCounters::default();
    let mut traces: Vec<StepTrace> = Vec::new();
    let mut state: Option<LmState> = None;

    let make_record = |ctx: &Context, traces: &[StepTrace], counters: CostCounters| {
        GenerationRecord {
            prompt_text: prompt_text.clone(),
            continuation_text: vocab.decode(ctx.generated_tokens()),
            context: ctx.clone(),
            traces: traces.to_vec(),
            counters,
            method: cfg.method,
            k: cfg.k,
            used_cache: cfg.use_cache,
        }
    };

    for step in 0..cfg.max_new_tokens {
        let cached = if cfg.use_cache { state.as_ref() } else { None };
        let out = match lm.next_distribution(&ctx, cached) {
            Ok(out) => out,
            Err(source) => {
                return Err(DecodeError::Model {
                    step,
                    source,
                    partial: Box::new(make_record(&ctx, &traces, counters)),
                })
            }
        };
        counters.lm_calls += 1;
        counters.tokens_encoded_lm += out.encoded_tokens as u64;

        let position = ctx.len();
        let (candidates, outcome) =
            policy.choose(&out.dist, ctx.generated_tokens(), &mut counters, rng);
        ctx.push(outcome.token);
        traces.push(StepTrace {
            position,
            candidates,
            selected: outcome.token,
            selection_prob: outcome.probability,
        });

        // The appended token's encoding is attributed to this step; with the
        // cache on the provider state is advanced over it so the next call
        // encodes nothing new.
        counters.tokens_encoded_lm += 1;
        if cfg.use_cache {
            match lm.commit_token(&out.state, outcome.token) {
                Ok(s) => state = Some(s),
                Err(source) => {
                    return Err(DecodeError::Model {
                        step,
                        source,
                        partial: Box::new(make_record(&ctx, &traces, counters)),
                    })
                }
            }
        }

        if cfg.stop_on_eos && Some(outcome.token) == vocab.eos() {
            break;
        }
    }

    Ok(make_record(&ctx, &traces, counters))
}

struct ArgsPolicy<'a> {
    vocab: &'a Vocabulary,
    fmt: &'a RewardFormat,
    prompt_text: String,
    rm: &'a dyn RewardModel,
    cfg: &'a DecodeConfig,
}

impl StepPolicy for ArgsPolicy<'_> {
    fn choose(
        &mut self,
        dist: &LmDistribution,
        generated: &[TokenId],
        counters: &mut CostCounters,
        rng: &mut ChaCha12Rng,
    ) -> (Vec<CandidateScore>, SelectionOutcome) {
        let topk = TopKSet::from_distribution(dist, self.cfg.k);
        let scores = score_candidates(
            self.vocab,
            self.fmt,
            &self.prompt_text,
            generated,
            &topk,
            self.rm,
            self.cfg.w,
            self.cfg.likelihood_mode,
            counters,
        );
        let outcome = match self.cfg.method {
            Method::ArgsStochastic => select_stochastic(&scores, self.cfg.tau, rng),
            _ => select_greedy(&scores),
        };
        (scores, outcome)
    }
}

/// Reward-guided decode (greedy or stochastic selection per `cfg.method`).
pub fn decode(
    lm: &dyn LanguageModel,
    rm: &dyn RewardModel,
    fmt: &RewardFormat,
    prompt: &Context,
    cfg: &DecodeConfig,
    rng: &mut ChaCha12Rng,
) -> Result<GenerationRecord, DecodeError> {
    let vocab = lm.vocab();
    let mut policy = ArgsPolicy {
        vocab,
        fmt,
        prompt_text: vocab.decode(prompt.tokens()),
        rm,
        cfg,
    };
    decode_loop(LoopSetup { lm, prompt, cfg }, &mut policy, rng)
}

fn single_candidate(token: TokenId, logprob: f64, score: f64) -> Vec<CandidateScore> {
    vec![CandidateScore {
        token,
        lm_term: logprob,
        reward: 0.0,
        score,
    }]
}

struct GreedyPolicy;

impl StepPolicy for GreedyPolicy {
    fn choose(
        &mut self,
        dist: &LmDistribution,
        _generated: &[TokenId],
        _counters: &mut CostCounters,
        _rng: &mut ChaCha12Rng,
    ) -> (Vec<CandidateScore>, SelectionOutcome) {
        let top = TopKSet::from_distribution(dist, 1);
        let (token, logprob) = top.candidates[0];
        (
            single_candidate(token, logprob, logprob),
            SelectionOutcome {
                token,
                method: Method::Greedy,
                probability: None,
                rng_draw: None,
            },
        )
    }
}

/// Full-vocabulary argmax each step; ties broken by lowest TokenId.
pub fn baseline_greedy(
    lm: &dyn LanguageModel,
    prompt: &Context,
    cfg: &DecodeConfig,
) -> Result<GenerationRecord, DecodeError> {
    let cfg = DecodeConfig {
        method: Method::Greedy,
        ..cfg.clone()
    };
    let mut rng = sequence_rng(cfg.seed, 0);
    decode_loop(
        LoopSetup { lm, prompt, cfg: &cfg },
        &mut GreedyPolicy,
        &mut rng,
    )
}

struct TopKPolicy {
    k: usize,
    tau: f64,
}

impl StepPolicy for TopKPolicy {
    fn choose(
        &mut self,
        dist: &LmDistribution,
        _generated: &[TokenId],
        _counters: &mut CostCounters,
        rng: &mut ChaCha12Rng,
    ) -> (Vec<CandidateScore>, SelectionOutcome) {
        let topk = TopKSet::from_distribution(dist, self.k);
        let logprobs: Vec<f64> = topk.candidates.iter().map(|c| c.1).collect();
        let probs = stable_softmax(&logprobs, self.tau);
        let (idx, draw) = sample_categorical(&probs, rng);
        let candidates = topk
            .candidates
            .iter()
            .map(|&(token, lp)| CandidateScore {
                token,
                lm_term: lp,
                reward: 0.0,
                score: lp,
            })
            .collect();
        (
            candidates,
            SelectionOutcome {
                token: topk.candidates[idx].0,
                method: Method::TopK,
                probability: Some(probs[idx]),
                rng_draw: Some(draw),
            },
        )
    }
}

/// Temperature-scaled sampling over the renormalized top-k model
/// probabilities (model likelihood only; no reward term).
pub fn baseline_topk(
    lm: &dyn LanguageModel,
    prompt: &Context,
    cfg: &DecodeConfig,
    rng: &mut ChaCha12Rng,
) -> Result<GenerationRecord, DecodeError> {
    let cfg = DecodeConfig {
        method: Method::TopK,
        ..cfg.clone()
    };
    let mut policy = TopKPolicy { k: cfg.k, tau: cfg.tau };
    decode_loop(LoopSetup { lm, prompt, cfg: &cfg }, &mut policy, rng)
}

/// The smallest probability-sorted prefix with cumulative mass >= p, as
/// (token, probability) pairs. Boundary ties resolved by TokenId via the
/// sort order.
pub fn nucleus_set(dist: &LmDistribution, p: f64) -> Vec<(TokenId, f64)> {
    let sorted = TopKSet::from_distribution(dist, dist.token_ids.len());
    let mut nucleus = Vec::new();
    let mut mass = 0.0;
    for &(token, lp) in &sorted.candidates {
        let prob = lp.exp();
        nucleus.push((token, prob));
        mass += prob;
        if mass >= p {
            break;
        }
    }
    nucleus
}

struct NucleusPolicy {
    p: f64,
}

impl StepPolicy for NucleusPolicy {
    fn choose(
        &mut self,
        dist: &LmDistribution,
        _generated: &[TokenId],
        _counters: &mut CostCounters,
        rng: &mut ChaCha12Rng,
    ) -> (Vec<CandidateScore>, SelectionOutcome) {
        let nucleus = nucleus_set(dist, self.p);
        let mass: f64 = nucleus.iter().map(|c| c.1).sum();
        let probs: Vec<f64> = nucleus.iter().map(|c| c.1 / mass).collect();
        let (idx, draw) = sample_categorical(&probs, rng);
        let candidates = nucleus
            .iter()
            .map(|&(token, prob)| CandidateScore {
                token,
                lm_term: prob.ln(),
                reward: 0.0,
                score: prob,
            })
            .collect();
        (
            candidates,
            SelectionOutcome {
                token: nucleus[idx].0,
                method: Method::Nucleus,
                probability: Some(probs[idx]),
                rng_draw: Some(draw),
            },
        )
    }
}

/// Nucleus (top-p) sampling from the renormalized nucleus of the model
/// distribution.
pub fn baseline_nucleus(
    lm: &dyn LanguageModel,
    prompt: &Context,
    cfg: &DecodeConfig,
    rng: &mut ChaCha12Rng,
) -> Result<GenerationRecord, DecodeError> {
    let cfg = DecodeConfig {
        method: Method::Nucleus,
        ..cfg.clone()
    };
    let mut policy = NucleusPolicy { p: cfg.top_p };
    decode_loop(LoopSetup { lm, prompt, cfg: &cfg }, &mut policy, rng)
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

struct ContrastivePolicy<'a> {
    vocab: &'a Vocabulary,
    embedder: &'a dyn Embedder,
    prompt_tokens: Vec<TokenId>,
    k: usize,
    alpha: f64,
}

impl StepPolicy for ContrastivePolicy<'_> {
    fn choose(
        &mut self,
        dist: &LmDistribution,
        generated: &[TokenId],
        _counters: &mut CostCounters,
        _rng: &mut ChaCha12Rng,
    ) -> (Vec<CandidateScore>, SelectionOutcome) {
        let topk = TopKSet::from_distribution(dist, self.k);
        let ctx_embeddings: Vec<Vec<f64>> = self
            .prompt_tokens
            .iter()
            .chain(generated)
            .map(|&t| self.embedder.embed(self.vocab.lexeme(t).unwrap_or("")))
            .collect();
        let scores: Vec<CandidateScore> = topk
            .candidates
            .iter()
            .map(|&(token, lp)| {
                let emb = self.embedder.embed(self.vocab.lexeme(token).unwrap_or(""));
                let penalty = ctx_embeddings
                    .iter()
                    .map(|c| cosine(&emb, c))
                    .fold(f64::NEG_INFINITY, f64::max);
                let prob = lp.exp();
                CandidateScore {
                    token,
                    lm_term: prob,
                    reward: -penalty,
                    score: (1.0 - self.alpha) * prob - self.alpha * penalty,
                }
            })
            .collect();
        let mut outcome = select_greedy(&scores);
        outcome.method = Method::Contrastive;
        (scores, outcome)
    }
}

/// Contrastive search over the top-k candidates: model probability minus an
/// alpha-weighted maximum cosine similarity to the context tokens.
/// Similarities come from the embedder's token vectors, standing in for
/// model hidden states.
pub fn baseline_contrastive(
    lm: &dyn LanguageModel,
    embedder: &dyn Embedder,
    prompt: &Context,
    cfg: &DecodeConfig,
) -> Result<GenerationRecord, DecodeError> {
    let cfg = DecodeConfig {
        method: Method::Contrastive,
        ..cfg.clone()
    };
    let mut rng = sequence_rng(cfg.seed, 0);
    let mut policy = ContrastivePolicy {
        vocab: lm.vocab(),
        embedder,
        prompt_tokens: prompt.tokens().to_vec(),
        k: cfg.k,
        alpha: cfg.alpha,
    };
    decode_loop(LoopSetup { lm, prompt, cfg: &cfg }, &mut policy, &mut rng)
}

/// Dispatches on `cfg.method`. `stream` selects the per-sequence RNG stream.
pub fn run_method(
    lm: &dyn LanguageModel,
    rm: Option<&dyn RewardModel>,
    embedder: Option<&dyn Embedder>,
    fmt: &RewardFormat,
    prompt: &Context,
    cfg: &DecodeConfig,
    stream: u64,
) -> Result<GenerationRecord, DecodeError> {
    let mut rng = sequence_rng(cfg.seed, stream);
    match cfg.method {
        Method::ArgsGreedy | Method::ArgsStochastic => {
            let rm = rm.ok_or(DecodeError::MissingProvider {
                method: cfg.method,
                missing: "reward model",
            })?;
            decode(lm, rm, fmt, prompt, cfg, &mut rng)
        }
        Method::Greedy => baseline_greedy(lm, prompt, cfg),
        Method::TopK => baseline_topk(lm, prompt, cfg, &mut rng),
        Method::Nucleus => baseline_nucleus(lm, prompt, cfg, &mut rng),
        Method::Contrastive => {
            let embedder = embedder.ok_or(DecodeError::MissingProvider {
                method: cfg.method,
                missing: "embedder",
            })?;
            baseline_contrastive(lm, embedder, prompt, cfg)
        }
    }
}

/// Expected-vs-observed counter check for a completed record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentReport {
    pub steps: u64,
    pub prompt_len: u64,
    pub expected: CostCounters,
    pub observed: CostCounters,
    /// Closed-form encoded-token total had caching been disabled:
    /// `n*s + s*(s+1)/2`.
    pub no_cache_total: u64,
}

#[derive(Debug, Error, PartialEq)]
#[error("counter mismatch: {diffs:?}")]
pub struct CounterMismatch {
    pub diffs: Vec<String>,
}

/// Validates the counter laws: `lm_calls = steps`, `reward_calls = k*steps`
/// for reward-guided methods, and the encoded-token totals for the record's
/// caching mode.
pub fn instrument_report(record: &GenerationRecord) -> Result<InstrumentReport, CounterMismatch> {
    let steps = record.steps() as u64;
    let n = record.context.prompt_len() as u64;
    let k = record.k as u64;
    let uses_reward = matches!(record.method, Method::ArgsGreedy | Method::ArgsStochastic);
    let no_cache_total = n * steps + steps * (steps + 1) / 2;
    let expected = CostCounters {
        lm_calls: steps,
        reward_calls: if uses_reward { k * steps } else { 0 },
        tokens_encoded_lm: if record.used_cache {
            n + steps
        } else {
            no_cache_total
        },
        tokens_encoded_rm: record.counters.tokens_encoded_rm,
    };
    let mut diffs = Vec::new();
    let obs = record.counters;
    if obs.lm_calls != expected.lm_calls {
        diffs.push(format!(
            "lm_calls: expected {}, observed {}",
            expected.lm_calls, obs.lm_calls
        ));
    }
    if obs.reward_calls != expected.reward_calls {
        diffs.push(format!(
            "reward_calls: expected {}, observed {}",
            expected.reward_calls, obs.reward_calls
        ));
    }
    if obs.tokens_encoded_lm != expected.tokens_encoded_lm {
        diffs.push(format!(
            "tokens_encoded_lm: expected {}, observed {}",
            expected.tokens_encoded_lm, obs.tokens_encoded_lm
        ));
    }
    if !diffs.is_empty() {
        return Err(CounterMismatch { diffs });
    }
    Ok(InstrumentReport {
        steps,
        prompt_len: n,
        expected,
        observed: obs,
        no_cache_total,
    })
}

/// One StepTrace per line, for oracle diffing.
pub fn write_traces_jsonl<W: std::io::Write>(
    record: &GenerationRecord,
    mut out: W,
) -> std::io::Result<()> {
    for trace in &record.traces {
        serde_json::to_writer(&mut out, trace)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Compact generation output: prompt, continuation, counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub prompt: String,
    pub continuation: String,
    pub counters: CostCounters,
}

impl From<&GenerationRecord> for GenerationSummary {
    fn from(r: &GenerationRecord) -> Self {
        Self {
            prompt: r.prompt_text.clone(),
            continuation: r.continuation_text.clone(),
            counters: r.counters,
        }
    }
}
