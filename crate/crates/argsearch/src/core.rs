//! Shared domain types: tokens, vocabularies, decoding contexts, and the
//! decode configuration with its validation and flat-file format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An ordered list of distinct lexemes, optionally with an end-of-sequence token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    lexemes: Vec<String>,
    eos: Option<TokenId>,
}

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("vocabulary must be nonempty")]
    Empty,
    #[error("duplicate lexeme {0:?}")]
    Duplicate(String),
    #[error("eos id {0} out of range (vocab size {1})")]
    EosOutOfRange(u32, usize),
}

impl Vocabulary {
    pub fn new<S: Into<String>>(
        lexemes: impl IntoIterator<Item = S>,
        eos: Option<TokenId>,
    ) -> Result<Self, VocabError> {
        let lexemes: Vec<String> = lexemes.into_iter().map(Into::into).collect();
        if lexemes.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        for lex in &lexemes {
            if !seen.insert(lex.as_str()) {
                return Err(VocabError::Duplicate(lex.clone()));
            }
        }
        if let Some(e) = eos {
            if e.index() >= lexemes.len() {
                return Err(VocabError::EosOutOfRange(e.0, lexemes.len()));
            }
        }
        Ok(Self { lexemes, eos })
    }

    /// Vocabulary `t0..t{n-1}` with no EOS, for tests and toy corpora.
    pub fn numbered(n: usize) -> Self {
        Self::new((0..n).map(|i| format!("t{i}")), None).expect("numbered vocab is valid")
    }

    pub fn len(&self) -> usize {
        self.lexemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lexemes.is_empty()
    }

    pub fn eos(&self) -> Option<TokenId> {
        self.eos
    }

    pub fn lexeme(&self, id: TokenId) -> Option<&str> {
        self.lexemes.get(id.index()).map(String::as_str)
    }

    pub fn lookup(&self, lexeme: &str) -> Option<TokenId> {
        self.lexemes
            .iter()
            .position(|l| l == lexeme)
            .map(|i| TokenId(i as u32))
    }

    /// Whitespace tokenization against this vocabulary; unknown words are errors.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, String> {
        text.split_whitespace()
            .map(|w| self.lookup(w).ok_or_else(|| format!("unknown token {w:?}")))
            .collect()
    }

    /// Joins lexemes with single spaces.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .filter_map(|&t| self.lexeme(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// The growing token context of a decode run. The first `prompt_len` tokens
/// are the prompt and are never rewritten; generation only appends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    tokens: Vec<TokenId>,
    prompt_len: usize,
}

impl Context {
    pub fn from_prompt(tokens: Vec<TokenId>) -> Self {
        let prompt_len = tokens.len();
        Self { tokens, prompt_len }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn prompt_tokens(&self) -> &[TokenId] {
        &self.tokens[..self.prompt_len]
    }

    pub fn generated_tokens(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn push(&mut self, token: TokenId) {
        self.tokens.push(token);
    }
}

/// Decoding method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ArgsGreedy,
    ArgsStochastic,
    Greedy,
    TopK,
    Nucleus,
    Contrastive,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ArgsGreedy => "args-greedy",
            Method::ArgsStochastic => "args-stochastic",
            Method::Greedy => "greedy",
            Method::TopK => "top-k",
            Method::Nucleus => "nucleus",
            Method::Contrastive => "contrastive",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "args-greedy" => Ok(Method::ArgsGreedy),
            "args-stochastic" => Ok(Method::ArgsStochastic),
            "greedy" => Ok(Method::Greedy),
            "top-k" | "topk" => Ok(Method::TopK),
            "nucleus" => Ok(Method::Nucleus),
            "contrastive" => Ok(Method::Contrastive),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scale in which the language-model term of the combined score is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodMode {
    Probability,
    LogProbability,
}

impl LikelihoodMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LikelihoodMode::Probability => "probability",
            LikelihoodMode::LogProbability => "log-probability",
        }
    }
}

impl std::str::FromStr for LikelihoodMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "probability" => Ok(LikelihoodMode::Probability),
            "log-probability" | "logprob" => Ok(LikelihoodMode::LogProbability),
            other => Err(format!("unknown likelihood mode {other:?}")),
        }
    }
}

/// Everything that governs one decode run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Weight on the reward term of the combined score.
    pub w: f64,
    /// Candidate count for reward-guided methods, and the k of top-k sampling.
    pub k: usize,
    /// Temperature for stochastic selection.
    pub tau: f64,
    /// Nucleus sampling mass threshold.
    pub top_p: f64,
    /// Degeneration penalty weight for contrastive search.
    pub alpha: f64,
    pub max_prompt_tokens: usize,
    pub max_new_tokens: usize,
    pub method: Method,
    pub likelihood_mode: LikelihoodMode,
    pub seed: u64,
    pub stop_on_eos: bool,
    /// When false, every step re-encodes the full context (for cost accounting).
    pub use_cache: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            w: 1.5,
            k: 10,
            tau: 0.7,
            top_p: 0.95,
            alpha: 0.6,
            max_prompt_tokens: 2048,
            max_new_tokens: 128,
            method: Method::ArgsGreedy,
            likelihood_mode: LikelihoodMode::LogProbability,
            seed: 0,
            stop_on_eos: true,
            use_cache: true,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("k must be ≥ 1")]
    KZero,
    #[error("k must be ≤ vocabulary size ({vocab_size}), got {k}")]
    KTooLarge { k: usize, vocab_size: usize },
    #[error("tau must be > 0")]
    TauNonPositive,
    #[error("w must be ≥ 0 and finite")]
    WNegative,
    #[error("top_p must be in (0, 1]")]
    TopPOutOfRange,
    #[error("alpha must be in [0, 1]")]
    AlphaOutOfRange,
    #[error("max_new_tokens must be ≥ 1")]
    MaxNewTokensZero,
    #[error("config line {line}: expected `key = value`")]
    BadLine { line: usize },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: bad value for {key}: {message}")]
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
}

/// Checks every invariant, reporting the first violation.
pub fn validate_config(cfg: &DecodeConfig, vocab_size: usize) -> Result<(), ConfigError> {
    if cfg.k == 0 {
        return Err(ConfigError::KZero);
    }
    if cfg.k > vocab_size {
        return Err(ConfigError::KTooLarge {
            k: cfg.k,
            vocab_size,
        });
    }
    if !(cfg.tau > 0.0) {
        return Err(ConfigError::TauNonPositive);
    }
    if !(cfg.w >= 0.0) || !cfg.w.is_finite() {
        return Err(ConfigError::WNegative);
    }
    if !(cfg.top_p > 0.0 && cfg.top_p <= 1.0) {
        return Err(ConfigError::TopPOutOfRange);
    }
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(ConfigError::AlphaOutOfRange);
    }
    if cfg.max_new_tokens == 0 {
        return Err(ConfigError::MaxNewTokensZero);
    }
    Ok(())
}

impl DecodeConfig {
    /// Serializes to the flat `key = value` config-file format, one field per line.
    pub fn to_flat(&self) -> String {
        format!(
            "w = {}\nk = {}\ntau = {}\ntop_p = {}\nalpha = {}\nmax_prompt_tokens = {}\nmax_new_tokens = {}\nmethod = {}\nlikelihood_mode = {}\nseed = {}\nstop_on_eos = {}\nuse_cache = {}\n",
            self.w,
            self.k,
            self.tau,
            self.top_p,
            self.alpha,
            self.max_prompt_tokens,
            self.max_new_tokens,
            self.method.as_str(),
            self.likelihood_mode.as_str(),
            self.seed,
            self.stop_on_eos,
            self.use_cache,
        )
    }

    /// Parses the flat config format. Missing keys keep their defaults;
    /// blank lines and `#` comments are ignored.
    pub fn from_flat(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = DecodeConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::BadLine { line: line_no })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |message: String| ConfigError::BadValue {
                line: line_no,
                key: key.to_string(),
                message,
            };
            match key {
                "w" => cfg.w = value.parse().map_err(|e| bad(format!("{e}")))?,
                "k" => cfg.k = value.parse().map_err(|e| bad(format!("{e}")))?,
                "tau" => cfg.tau = value.parse().map_err(|e| bad(format!("{e}")))?,
                "top_p" => cfg.top_p = value.parse().map_err(|e| bad(format!("{e}")))?,
                "alpha" => cfg.alpha = value.parse().map_err(|e| bad(format!("{e}")))?,
                "max_prompt_tokens" => {
                    cfg.max_prompt_tokens = value.parse().map_err(|e| bad(format!("{e}")))?
                }
                "max_new_tokens" => {
                    cfg.max_new_tokens = value.parse().map_err(|e| bad(format!("{e}")))?
                }
                "method" => cfg.method = value.parse().map_err(bad)?,
                "likelihood_mode" => cfg.likelihood_mode = value.parse().map_err(bad)?,
                "seed" => cfg.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
                "stop_on_eos" => cfg.stop_on_eos = value.parse().map_err(|e| bad(format!("{e}")))?,
                "use_cache" => cfg.use_cache = value.parse().map_err(|e| bad(format!("{e}")))?,
                other => {
                    return Err(ConfigError::UnknownKey {
                        line: line_no,
                        key: other.to_string(),
                    })
                }
            }
        }
        Ok(cfg)
    }
}

/// Per-candidate record at one decode step: the language-model term, the
/// reward, and the combined score `lm_term + w * reward`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub token: TokenId,
    pub lm_term: f64,
    pub reward: f64,
    pub score: f64,
}

/// One decode step: the scored candidate set and the selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    /// Context length at the time of selection.
    pub position: usize,
    pub candidates: Vec<CandidateScore>,
    pub selected: TokenId,
    /// Selection probability under stochastic methods.
    pub selection_prob: Option<f64>,
}

/// Full record of one generation: text, token context, per-step traces,
/// and operation counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_text: String,
    pub continuation_text: String,
    pub context: Context,
    pub traces: Vec<StepTrace>,
    pub counters: crate::models::CostCounters,
    pub method: Method,
    pub k: usize,
    pub used_cache: bool,
}

impl GenerationRecord {
    pub fn steps(&self) -> usize {
        self.traces.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_rejects_duplicates_and_bad_eos() {
        assert_eq!(
            Vocabulary::new(["a", "a"], None),
            Err(VocabError::Duplicate("a".into()))
        );
        assert_eq!(
            Vocabulary::new(["a", "b"], Some(TokenId(2))),
            Err(VocabError::EosOutOfRange(2, 2))
        );
        assert_eq!(Vocabulary::new(Vec::<String>::new(), None), Err(VocabError::Empty));
    }

    #[test]
    fn vocab_encode_decode() {
        let v = Vocabulary::new(["hello", "world"], None).unwrap();
        let toks = v.encode("world hello").unwrap();
        assert_eq!(toks, vec![TokenId(1), TokenId(0)]);
        assert_eq!(v.decode(&toks), "world hello");
        assert!(v.encode("nope").is_err());
    }

    #[test]
    fn validate_accepts_paper_defaults() {
        let cfg = DecodeConfig {
            w: 1.5,
            k: 10,
            tau: 0.7,
            ..DecodeConfig::default()
        };
        assert!(validate_config(&cfg, 50_000).is_ok());
    }

    #[test]
    fn validate_rejects_k_zero() {
        let cfg = DecodeConfig { k: 0, ..DecodeConfig::default() };
        assert_eq!(validate_config(&cfg, 100), Err(ConfigError::KZero));
    }

    #[test]
    fn validate_rejects_tau_zero() {
        let cfg = DecodeConfig { tau: 0.0, ..DecodeConfig::default() };
        assert_eq!(validate_config(&cfg, 100), Err(ConfigError::TauNonPositive));
    }

    #[test]
    fn validate_rejects_k_above_vocab() {
        let cfg = DecodeConfig { k: 11, ..DecodeConfig::default() };
        assert_eq!(
            validate_config(&cfg, 10),
            Err(ConfigError::KTooLarge { k: 11, vocab_size: 10 })
        );
    }

    #[test]
    fn config_flat_round_trip() {
        let cfg = DecodeConfig {
            w: 2.25,
            k: 7,
            tau: 0.31,
            top_p: 0.9,
            alpha: 0.4,
            max_prompt_tokens: 64,
            max_new_tokens: 17,
            method: Method::Nucleus,
            likelihood_mode: LikelihoodMode::Probability,
            seed: 12345,
            stop_on_eos: false,
            use_cache: false,
        };
        let parsed = DecodeConfig::from_flat(&cfg.to_flat()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn config_flat_reports_bad_lines() {
        assert_eq!(
            DecodeConfig::from_flat("w 1.5"),
            Err(ConfigError::BadLine { line: 1 })
        );
        assert!(matches!(
            DecodeConfig::from_flat("banana = 3"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
    }

    #[test]
    fn context_tracks_prompt_prefix() {
        let mut ctx = Context::from_prompt(vec![TokenId(1), TokenId(2)]);
        ctx.push(TokenId(0));
        assert_eq!(ctx.prompt_tokens(), &[TokenId(1), TokenId(2)]);
        assert_eq!(ctx.generated_tokens(), &[TokenId(0)]);
    }
}
