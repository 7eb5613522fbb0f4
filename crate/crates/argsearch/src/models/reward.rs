//! Linear reward model over hashed bag-of-n-gram features, the pairwise
//! preference loss, and its analytic gradient.
//!
//! The loss for a pair with rewards `r_w` (preferred) and `r_l` is
//! `L = -log sigmoid(r_w - r_l)`: nonnegative, `ln 2` at a zero gap, and
//! vanishing as the gap grows.

use super::{PreferencePair, RewardModel};
use serde::{Deserialize, Serialize};

/// FNV-1a 64-bit hash. Hand-rolled so feature indices are identical across
/// platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// N-gram order range and hashing width of the featurizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Includes all orders `1..=max_order`.
    pub max_order: usize,
    pub width: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            max_order: 2,
            width: 4096,
        }
    }
}

impl FeatureSpec {
    /// Hashed bag-of-n-grams over whitespace tokens, L2-normalized.
    /// Empty text maps to the zero vector.
    pub fn featurize(&self, text: &str) -> Vec<f64> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut phi = vec![0.0; self.width];
        for order in 1..=self.max_order {
            if words.len() < order {
                break;
            }
            for gram in words.windows(order) {
                let key = gram.join("\u{1f}");
                let idx = (fnv1a64(key.as_bytes()) % self.width as u64) as usize;
                phi[idx] += 1.0;
            }
        }
        let norm = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut phi {
                *x /= norm;
            }
        }
        phi
    }
}

/// Weight vector plus the feature spec it was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModelParams {
    pub feature_spec: FeatureSpec,
    pub theta: Vec<f64>,
}

impl RewardModelParams {
    pub fn zeros(feature_spec: FeatureSpec) -> Self {
        Self {
            theta: vec![0.0; feature_spec.width],
            feature_spec,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.theta.len() != self.feature_spec.width {
            return Err(format!(
                "theta length {} != feature width {}",
                self.theta.len(),
                self.feature_spec.width
            ));
        }
        if self.theta.iter().any(|x| !x.is_finite()) {
            return Err("theta has non-finite entries".into());
        }
        Ok(())
    }
}

/// Linear reward model: `r(text) = theta . featurize(text)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearNgramReward {
    pub params: RewardModelParams,
}

impl LinearNgramReward {
    pub fn new(params: RewardModelParams) -> Result<Self, String> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn featurize(&self, text: &str) -> Vec<f64> {
        self.params.feature_spec.featurize(text)
    }
}

impl RewardModel for LinearNgramReward {
    fn score_text(&self, text: &str) -> f64 {
        let phi = self.featurize(text);
        dot(&self.params.theta, &phi)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Synthetic reward: `weight * occurrences(target) / total tokens` of the
/// scored text. Alignment trends under this reward are checkable by brute
/// force.
#[derive(Debug, Clone)]
pub struct LexicalReward {
    pub target: String,
    pub weight: f64,
}

impl LexicalReward {
    pub fn new(target: impl Into<String>, weight: f64) -> Self {
        Self {
            target: target.into(),
            weight,
        }
    }
}

impl RewardModel for LexicalReward {
    fn score_text(&self, text: &str) -> f64 {
        let mut total = 0u64;
        let mut hits = 0u64;
        for word in text.split_whitespace() {
            total += 1;
            if word == self.target {
                hits += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            self.weight * hits as f64 / total as f64
        }
    }
}

/// Transcript formatting applied before reward scoring. `{prompt}` and
/// `{response}` are substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardFormat {
    pub template: String,
}

impl Default for RewardFormat {
    fn default() -> Self {
        Self {
            template: "Human: {prompt}\n\nAssistant: {response}".into(),
        }
    }
}

impl RewardFormat {
    /// Raw concatenation with a single separating space, no role markers.
    pub fn raw() -> Self {
        Self {
            template: "{prompt} {response}".into(),
        }
    }

    pub fn apply(&self, prompt: &str, response: &str) -> String {
        self.template
            .replace("{prompt}", prompt)
            .replace("{response}", response)
    }
}

/// Reward value plus a flag set when the input was empty (the value is then
/// defined as 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardScore {
    pub value: f64,
    pub empty_input: bool,
}

/// Scores `text` with the reward model; empty input is 0 with a warning flag.
pub fn rm_score(rm: &dyn RewardModel, text: &str) -> RewardScore {
    if text.split_whitespace().next().is_none() {
        return RewardScore {
            value: 0.0,
            empty_input: true,
        };
    }
    RewardScore {
        value: rm.score_text(text),
        empty_input: false,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln sigmoid(d)` computed as `ln(1 + e^{-d})`, stable for large |d|.
fn neg_log_sigmoid(d: f64) -> f64 {
    if d > 0.0 {
        (-d).exp().ln_1p()
    } else {
        -d + d.exp().ln_1p()
    }
}

/// Pairwise preference loss `-log sigmoid(r_w - r_l)` of the pair under
/// `rm`, with transcripts formatted by `fmt`.
pub fn rm_pairwise_loss(rm: &dyn RewardModel, fmt: &RewardFormat, pair: &PreferencePair) -> f64 {
    let r_w = rm.score_text(&fmt.apply(&pair.prompt, &pair.chosen));
    let r_l = rm.score_text(&fmt.apply(&pair.prompt, &pair.rejected));
    neg_log_sigmoid(r_w - r_l)
}

/// Analytic gradient of the pairwise loss with respect to theta of a linear
/// reward model: `(sigmoid(d) - 1) * (phi_w - phi_l)` with `d = r_w - r_l`.
pub fn rm_loss_gradient(
    rm: &LinearNgramReward,
    fmt: &RewardFormat,
    pair: &PreferencePair,
) -> Vec<f64> {
    let phi_w = rm.featurize(&fmt.apply(&pair.prompt, &pair.chosen));
    let phi_l = rm.featurize(&fmt.apply(&pair.prompt, &pair.rejected));
    let d = dot(&rm.params.theta, &phi_w) - dot(&rm.params.theta, &phi_l);
    let coeff = sigmoid(d) - 1.0;
    phi_w
        .iter()
        .zip(&phi_l)
        .map(|(w, l)| coeff * (w - l))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn zero_theta_scores_zero() {
        let rm = LinearNgramReward::new(RewardModelParams::zeros(FeatureSpec::default())).unwrap();
        assert_eq!(rm.score_text("anything at all"), 0.0);
    }

    #[test]
    fn lexical_reward_counts_frequency() {
        let rm = LexicalReward::new("helpful", 1.0);
        let text = "a helpful answer is a helpful thing to give someone";
        // 2 occurrences in 10 tokens
        assert!((rm.score_text(text) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn linear_score_matches_brute_force_dot_product() {
        let spec = FeatureSpec {
            max_order: 2,
            width: 64,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let theta: Vec<f64> = (0..spec.width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rm = LinearNgramReward::new(RewardModelParams {
            feature_spec: spec,
            theta: theta.clone(),
        })
        .unwrap();
        let text = "the quick brown fox jumps over the lazy dog";
        let phi = spec.featurize(text);
        let expected: f64 = theta.iter().zip(&phi).map(|(t, p)| t * p).sum();
        assert!((rm.score_text(text) - expected).abs() < 1e-15);
    }

    #[test]
    fn rm_score_flags_empty_input() {
        let rm = LexicalReward::new("x", 1.0);
        let s = rm_score(&rm, "   ");
        assert_eq!(s.value, 0.0);
        assert!(s.empty_input);
        assert!(!rm_score(&rm, "x y").empty_input);
    }

    #[test]
    fn featurize_is_unit_norm() {
        let spec = FeatureSpec::default();
        let phi = spec.featurize("some words repeated words");
        let norm: f64 = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(spec.featurize("").iter().all(|&x| x == 0.0));
    }

    #[test]
    fn loss_at_zero_gap_is_ln2() {
        let rm = LinearNgramReward::new(RewardModelParams::zeros(FeatureSpec::default())).unwrap();
        let pair = PreferencePair::new("p", "a", "b").unwrap();
        let loss = rm_pairwise_loss(&rm, &RewardFormat::default(), &pair);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_limits() {
        // Large positive gap -> loss near 0; large negative gap -> loss ~ -d.
        assert!(neg_log_sigmoid(60.0) < 1e-25);
        assert!((neg_log_sigmoid(-60.0) - 60.0).abs() < 1e-12);
        assert!(neg_log_sigmoid(0.0) > 0.0);
    }

    #[test]
    fn loss_at_unit_gap() {
        // -ln(1/(1+e^-1)); recomputed through the direct formula as an
        // independent route.
        let direct = -(1.0 / (1.0 + (-1.0f64).exp())).ln();
        assert!((neg_log_sigmoid(1.0) - direct).abs() < 1e-15);
        assert!((neg_log_sigmoid(1.0) - 0.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn gradient_zero_for_identical_features() {
        let rm = LinearNgramReward::new(RewardModelParams::zeros(FeatureSpec::default())).unwrap();
        // Different strings, same bag of words and bigrams.
        let pair = PreferencePair::new("p", "a b a b", "a b a b ").unwrap();
        let g = rm_loss_gradient(&rm, &RewardFormat::raw(), &pair);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_at_zero_gap_is_half_feature_difference() {
        let rm = LinearNgramReward::new(RewardModelParams::zeros(FeatureSpec::default())).unwrap();
        let fmt = RewardFormat::raw();
        let pair = PreferencePair::new("p", "good answer", "bad answer").unwrap();
        let g = rm_loss_gradient(&rm, &fmt, &pair);
        let phi_w = rm.featurize(&fmt.apply(&pair.prompt, &pair.chosen));
        let phi_l = rm.featurize(&fmt.apply(&pair.prompt, &pair.rejected));
        for i in 0..g.len() {
            assert!((g[i] - (-0.5) * (phi_w[i] - phi_l[i])).abs() < 1e-15);
        }
    }

    /// Central-difference gradient of the pairwise loss, the independent
    /// oracle for the analytic formula.
    fn fd_gradient(
        rm: &LinearNgramReward,
        fmt: &RewardFormat,
        pair: &PreferencePair,
        step: f64,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; rm.params.theta.len()];
        for i in 0..grad.len() {
            let mut plus = rm.clone();
            plus.params.theta[i] += step;
            let mut minus = rm.clone();
            minus.params.theta[i] -= step;
            grad[i] = (rm_pairwise_loss(&plus, fmt, pair) - rm_pairwise_loss(&minus, fmt, pair))
                / (2.0 * step);
        }
        grad
    }

    #[test]
    fn gradient_matches_central_differences() {
        let spec = FeatureSpec {
            max_order: 2,
            width: 32,
        };
        let fmt = RewardFormat::default();
        let words = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"];
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..spec.width).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let rm = LinearNgramReward::new(RewardModelParams {
                feature_spec: spec,
                theta,
            })
            .unwrap();
            let sample = |rng: &mut ChaCha12Rng| {
                (0..rng.gen_range(2..6))
                    .map(|_| words[rng.gen_range(0..words.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let pair = PreferencePair {
                prompt: sample(&mut rng),
                chosen: sample(&mut rng),
                rejected: sample(&mut rng),
            };
            let analytic = rm_loss_gradient(&rm, &fmt, &pair);
            let numeric = fd_gradient(&rm, &fmt, &pair, 1e-5);
            let scale = analytic
                .iter()
                .map(|x| x.abs())
                .fold(0.0f64, f64::max)
                .max(1e-8);
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!((a - n).abs() / scale <= 1e-4, "a={a} n={n}");
            }
        }
    }
}
