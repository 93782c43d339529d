//! The decode loops: monitored decoding plus greedy and Best-of-N baselines.
//!
//! Monitored decoding drafts up to `block_size_m` tokens greedily from the
//! target, scores the block against the reference, and either keeps the
//! draft or replaces it with the tree-search revision. Target distributions
//! computed while drafting are reused for scoring, so an accepted block
//! costs exactly one target and one reference call per token; only rejected
//! blocks pay for the revision search on top.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backends::LmBackend;
use crate::error::{Error, Result};
use crate::monitor::{accept_block, clamped_ratio, score_block_from_log_probs};
use crate::revision::revise_block_with_depth;
use crate::types::{token_weight, DecodeConfig, DecodeTrace, Distribution, TokenId, TokenSeq};

/// Baseline decoding: argmax of the next-token distribution at every step,
/// ties toward the lower token id, stopping at the end-of-sequence token or
/// after `max_tokens` tokens. The end-of-sequence token, when emitted, is
/// included in the output.
pub fn greedy_decode(
    backend: &dyn LmBackend,
    prompt: &[TokenId],
    max_tokens: usize,
) -> Result<TokenSeq> {
    let mut tokens = TokenSeq::new();
    let mut context = prompt.to_vec();
    while tokens.len() < max_tokens {
        let token = backend.next_distribution(&context)?.argmax();
        tokens.push(token);
        if backend.eos_token() == Some(token) {
            break;
        }
        context.push(token);
    }
    Ok(tokens)
}

/// Monitored decoding: repeatedly draft a greedy block, verify it with the
/// block monitor, and revise rejected blocks by tree search. Returns the
/// final tokens together with a full trace (per-block reports, model-call
/// counts, latency).
///
/// With `gamma0 = 0` under the threshold acceptance mode every block is
/// accepted, so the output is token-identical to [`greedy_decode`].
pub fn md_decode(
    target: &dyn LmBackend,
    reference: &dyn LmBackend,
    prompt: &[TokenId],
    config: &DecodeConfig,
) -> Result<(TokenSeq, DecodeTrace)> {
    config.validate()?;
    if target.vocab_size() != reference.vocab_size() {
        return Err(Error::invalid_argument(format!(
            "target vocab_size {} does not match reference vocab_size {}",
            target.vocab_size(),
            reference.vocab_size()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let started = Instant::now();
    let mut target_calls = 0usize;
    let mut reference_calls = 0usize;
    let mut generated = TokenSeq::new();
    let mut blocks = Vec::new();

    while generated.len() < config.max_tokens {
        let start_index = generated.len();
        let budget = config.max_tokens - generated.len();

        // Draft greedily, reusing each step's target distribution for the
        // monitor so scoring costs no extra target queries.
        let mut draft = TokenSeq::new();
        let mut target_log_probs = Vec::new();
        let mut reference_log_probs = Vec::new();
        let mut context: Vec<TokenId> =
            Vec::with_capacity(prompt.len() + generated.len() + config.block_size_m);
        context.extend_from_slice(prompt);
        context.extend_from_slice(&generated);
        while draft.len() < config.block_size_m.min(budget) {
            let target_dist = target.next_distribution(&context)?;
            target_calls += 1;
            let token = target_dist.argmax();
            let reference_dist = reference.next_distribution(&context)?;
            reference_calls += 1;
            draft.push(token);
            target_log_probs.push(target_dist.log_prob(token));
            reference_log_probs.push(reference_dist.log_prob(token));
            if target.eos_token() == Some(token) {
                break;
            }
            context.push(token);
        }

        let mut report = score_block_from_log_probs(
            &draft,
            &target_log_probs,
            &reference_log_probs,
            start_index,
            prompt.len(),
            config,
        )?;

        if accept_block(&mut report, config, &mut rng) {
            generated.extend_from_slice(&draft);
        } else {
            let depth = config.block_size_m.min(budget);
            let (revised, stats) =
                revise_block_with_depth(target, reference, prompt, &generated, config, depth)?;
            target_calls += stats.target_calls;
            reference_calls += stats.reference_calls;
            report.revision_paths_explored = stats.paths_created;
            generated.extend_from_slice(&revised);
            report.revised_tokens = Some(revised);
        }
        blocks.push(report);

        if generated.last().copied() == target.eos_token() && target.eos_token().is_some() {
            break;
        }
    }

    let elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;
    // Clock granularity floor so timing fields stay positive on tiny runs.
    let wall_time_per_token = (elapsed_ms / generated.len() as f64).max(1e-9);
    let trace = DecodeTrace {
        prompt: prompt.to_vec(),
        blocks,
        final_tokens: generated.clone(),
        target_model_calls: target_calls,
        reference_model_calls: reference_calls,
        wall_time_per_token,
        tokens_per_second: 1000.0 / wall_time_per_token,
    };
    Ok((generated, trace))
}

/// Draws one token from `dist` at the given temperature. Probabilities are
/// rescaled proportionally to `p^(1/temperature)`; temperatures below 1e-6
/// degenerate to argmax.
fn sample_token<R: Rng>(dist: &Distribution, temperature: f64, rng: &mut R) -> TokenId {
    if temperature < 1e-6 {
        return dist.argmax();
    }
    let scaled: Vec<f64> = (0..dist.len() as TokenId)
        .map(|t| dist.log_prob(t) / temperature)
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let normalizer: f64 = scaled.iter().map(|&lp| (lp - max).exp()).sum();
    let draw: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, &lp) in scaled.iter().enumerate() {
        cumulative += (lp - max).exp() / normalizer;
        if draw < cumulative {
            return i as TokenId;
        }
    }
    // Rounding can leave the cumulative sum a hair under 1.
    (dist.len() - 1) as TokenId
}

/// Index of the highest score, ties toward the lowest index.
fn best_candidate(scores: &[f64]) -> usize {
    let mut best = 0usize;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    best
}

/// Best-of-N baseline: samples `n` full responses from the target at the
/// given temperature, scores each with the length-normalized monitor score
/// over the whole response (weighted ratio sum divided by the weight sum),
/// and returns the best response plus all candidate scores. Ties go to the
/// earliest candidate. Sampling is reproducible from `seed`.
pub fn best_of_n_decode(
    target: &dyn LmBackend,
    reference: &dyn LmBackend,
    prompt: &[TokenId],
    n: usize,
    temperature: f64,
    config: &DecodeConfig,
    seed: u64,
) -> Result<(TokenSeq, Vec<f64>)> {
    if n == 0 {
        return Err(Error::invalid_argument("candidate count must be >= 1"));
    }
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::invalid_argument(format!(
            "temperature must be a positive finite number, got {temperature}"
        )));
    }
    config.validate()?;
    if target.vocab_size() != reference.vocab_size() {
        return Err(Error::invalid_argument(format!(
            "target vocab_size {} does not match reference vocab_size {}",
            target.vocab_size(),
            reference.vocab_size()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<TokenSeq> = Vec::with_capacity(n);
    let mut scores: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut tokens = TokenSeq::new();
        let mut context = prompt.to_vec();
        let mut weighted_sum = 0.0;
        let mut weight_sum = 0.0;
        while tokens.len() < config.max_tokens {
            let target_dist = target.next_distribution(&context)?;
            let reference_dist = reference.next_distribution(&context)?;
            let token = sample_token(&target_dist, temperature, &mut rng);
            // The judge scores the sampled token under the untempered
            // distributions.
            let ratio = clamped_ratio(
                target_dist.log_prob(token),
                reference_dist.log_prob(token),
                config.prob_floor,
            );
            let weight = token_weight(tokens.len(), prompt.len(), config.weight_scheme)?;
            weighted_sum += weight * ratio;
            weight_sum += weight;
            tokens.push(token);
            if target.eos_token() == Some(token) {
                break;
            }
            context.push(token);
        }
        candidates.push(tokens);
        scores.push(weighted_sum / weight_sum);
    }
    let winner = best_candidate(&scores);
    Ok((candidates[winner].clone(), scores))
}
