//! Randomized property checks over the numeric core: weight decay,
//! distribution normalization, acceptance-rule algebra, corpus round
//! trips, and the greedy reduction of monitored decoding.

use mondec::{
    accept_block, greedy_decode, load_jsonl_corpus, md_decode, random_decode_instance,
    score_block_from_log_probs, token_weight, write_jsonl_corpus, AcceptanceMode, DecodeConfig,
    Distribution, QaItem, TokenId, WeightScheme,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn token_weights_decay_strictly(generated in 0usize..64, prompt_len in 0usize..12) {
        for scheme in [WeightScheme::GeneratedPlusOne, WeightScheme::FullContext] {
            if scheme == WeightScheme::FullContext && prompt_len == 0 && generated == 0 {
                prop_assert!(token_weight(generated, prompt_len, scheme).is_err());
                continue;
            }
            let here = token_weight(generated, prompt_len, scheme).unwrap();
            let next = token_weight(generated + 1, prompt_len, scheme).unwrap();
            prop_assert!(here > 0.0 && here <= 1.0);
            prop_assert!(next < here, "weight must fall as generation grows");
        }
    }

    #[test]
    fn distributions_normalize_and_order(raw in prop::collection::vec(0.01f64..10.0, 1..16)) {
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let dist = Distribution::from_probs(&probs).unwrap();
        dist.validate().unwrap();
        prop_assert!((dist.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let argmax = dist.argmax() as usize;
        for (i, &p) in probs.iter().enumerate() {
            prop_assert!(probs[argmax] >= p || i == argmax);
        }

        let order = dist.top_n(probs.len());
        prop_assert_eq!(order.len(), probs.len());
        for pair in order.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let pa = dist.prob(a);
            let pb = dist.prob(b);
            prop_assert!(pa > pb || (pa == pb && a < b));
        }
    }

    #[test]
    fn log_weight_construction_matches_probs(raw in prop::collection::vec(0.01f64..10.0, 1..12)) {
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let from_probs = Distribution::from_probs(&probs).unwrap();
        // Unnormalized logs exercise the log-sum-exp path.
        let logs: Vec<f64> = raw.iter().map(|w| w.ln() + 3.0).collect();
        let from_logs = Distribution::from_log_weights(&logs).unwrap();
        for t in 0..probs.len() as TokenId {
            prop_assert!((from_probs.prob(t) - from_logs.prob(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_decisions_are_monotone_and_scale_free(
        target_lps in prop::collection::vec(-12.0f64..-0.01, 1..4),
        reference_deltas in prop::collection::vec(-6.0f64..6.0, 4),
        gamma_lo in 0.0f64..1.5,
        gamma_gap in 0.0f64..1.5,
        start_index in 0usize..6,
    ) {
        let len = target_lps.len();
        let reference_lps: Vec<f64> = target_lps
            .iter()
            .zip(&reference_deltas)
            .map(|(t, d)| (t + d).min(-1e-9))
            .collect();
        let tokens: Vec<TokenId> = (0..len as TokenId).collect();
        let lo = DecodeConfig { gamma0: gamma_lo, ..DecodeConfig::default() };
        let hi = DecodeConfig { gamma0: gamma_lo + gamma_gap, ..DecodeConfig::default() };

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut report_lo =
            score_block_from_log_probs(&tokens, &target_lps, &reference_lps, start_index, 2, &lo)
                .unwrap();
        let mut report_hi =
            score_block_from_log_probs(&tokens, &target_lps, &reference_lps, start_index, 2, &hi)
                .unwrap();
        report_lo.validate(&lo).unwrap();

        // The decision is the normalized score against gamma0.
        let accept_lo = accept_block(&mut report_lo, &lo, &mut rng);
        prop_assert_eq!(accept_lo, report_lo.r_beta / report_lo.sum_weights >= gamma_lo);

        // Rejection at a low bar implies rejection at any higher bar.
        let accept_hi = accept_block(&mut report_hi, &hi, &mut rng);
        if !accept_lo {
            prop_assert!(!accept_hi);
        }

        // Scaling every weight by a common factor changes nothing.
        let mut scaled = report_lo.clone();
        for w in &mut scaled.weights {
            *w *= 7.5;
        }
        scaled.r_beta *= 7.5;
        scaled.sum_weights *= 7.5;
        scaled.threshold *= 7.5;
        prop_assert_eq!(accept_block(&mut scaled, &lo, &mut rng), accept_lo);
    }

    #[test]
    fn stochastic_acceptance_is_seed_stable(
        target_lps in prop::collection::vec(-12.0f64..-0.01, 1..4),
        seed in any::<u64>(),
    ) {
        let tokens: Vec<TokenId> = (0..target_lps.len() as TokenId).collect();
        let reference_lps: Vec<f64> = target_lps.iter().map(|t| (t - 1.0).min(-1e-9)).collect();
        let config = DecodeConfig {
            acceptance_mode: AcceptanceMode::Stochastic,
            ..DecodeConfig::default()
        };
        let mut report =
            score_block_from_log_probs(&tokens, &target_lps, &reference_lps, 0, 1, &config)
                .unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(
            accept_block(&mut report, &config, &mut a),
            accept_block(&mut report, &config, &mut b)
        );
    }

    #[test]
    fn corpora_round_trip(
        entries in prop::collection::vec(("[a-z ]{0,18}", prop::collection::vec("[a-zA-Z0-9 ]{1,10}", 1..4)), 0..8),
    ) {
        let items: Vec<QaItem> = entries
            .into_iter()
            .enumerate()
            .map(|(i, (prompt, answers))| QaItem { id: format!("item-{i}"), prompt, answers })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_jsonl_corpus(&path, &items).unwrap();
        prop_assert_eq!(load_jsonl_corpus(&path).unwrap(), items);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zero_gamma_decoding_is_greedy(seed in any::<u64>(), max_tokens in 1usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (backend, prompt) = random_decode_instance(&mut rng).unwrap();
        let config = DecodeConfig { gamma0: 0.0, max_tokens, ..DecodeConfig::default() };
        let (tokens, trace) = md_decode(backend.as_ref(), backend.as_ref(), &prompt, &config).unwrap();
        prop_assert_eq!(&tokens, &greedy_decode(backend.as_ref(), &prompt, max_tokens).unwrap());
        prop_assert!(tokens.len() <= max_tokens);
        prop_assert_eq!(trace.blocks_rejected(), 0);
        trace.validate(&config).unwrap();
    }
}
