//! Property tests for the numeric and serialization invariants that the
//! rest of the suite relies on.

use argsearch::core::{DecodeConfig, LikelihoodMode, Method, TokenId};
use argsearch::decode::stable_softmax;
use argsearch::metrics::diversity;
use proptest::prelude::*;

proptest! {
    // The selection distribution is a probability distribution and is
    // invariant under shifting every score by a constant.
    #[test]
    fn softmax_is_normalized_and_shift_invariant(
        scores in proptest::collection::vec(-50.0f64..50.0, 1..16),
        tau in 0.05f64..5.0,
        shift in -100.0f64..100.0,
    ) {
        let p = stable_softmax(&scores, tau);
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));

        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let q = stable_softmax(&shifted, tau);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    // Extreme inputs must not produce NaN or zero-sum distributions.
    #[test]
    fn softmax_survives_extreme_scores(
        scores in proptest::collection::vec(-1e6f64..1e6, 1..8),
        tau in 1e-6f64..10.0,
    ) {
        let p = stable_softmax(&scores, tau);
        prop_assert!(p.iter().all(|x| x.is_finite()));
        prop_assert!(p.iter().sum::<f64>() > 0.5);
    }

    // Flat key = value serialization round-trips every configuration.
    #[test]
    fn flat_config_round_trips(
        w in -4.0f64..4.0,
        k in 1usize..64,
        tau in 0.01f64..4.0,
        top_p in 0.05f64..1.0,
        alpha in 0.0f64..1.0,
        seed in any::<u64>(),
        method_ix in 0usize..6,
        log_mode in any::<bool>(),
        use_cache in any::<bool>(),
        stop_on_eos in any::<bool>(),
    ) {
        let methods = [
            Method::ArgsGreedy,
            Method::ArgsStochastic,
            Method::Greedy,
            Method::TopK,
            Method::Nucleus,
            Method::Contrastive,
        ];
        let cfg = DecodeConfig {
            w,
            k,
            tau,
            top_p,
            alpha,
            seed,
            method: methods[method_ix],
            likelihood_mode: if log_mode {
                LikelihoodMode::LogProbability
            } else {
                LikelihoodMode::Probability
            },
            use_cache,
            stop_on_eos,
            max_prompt_tokens: 2048,
            max_new_tokens: 128,
        };
        let parsed = DecodeConfig::from_flat(&cfg.to_flat()).unwrap();
        prop_assert_eq!(cfg, parsed);
    }

    // Diversity only looks at the repetition structure, so any one-to-one
    // renaming of token ids leaves it unchanged.
    #[test]
    fn diversity_is_renaming_invariant(
        tokens in proptest::collection::vec(0u32..12, 0..40),
        offset in 1u32..1000,
    ) {
        let original: Vec<TokenId> = tokens.iter().map(|&t| TokenId(t)).collect();
        let renamed: Vec<TokenId> = tokens.iter().map(|&t| TokenId(t * 7919 + offset)).collect();
        let a = diversity(&original);
        let b = diversity(&renamed);
        prop_assert!((a - b).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
