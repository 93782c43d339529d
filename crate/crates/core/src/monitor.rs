//! Block monitor: scores each freshly drafted block by comparing how
//! plausible its tokens look to a trusted reference model versus the target
//! model that produced them, then decides whether the block may stand.
//!
//! For the token at global generated position `g` (prompt excluded) the
//! monitor computes the floor-clamped probability ratio
//! `reference(token) / target(token)` and the position weight
//! [`token_weight`]`(g, ...)`. The block score is the weighted ratio sum.
//! Tokens the reference finds as likely as the target contribute their full
//! weight; tokens the reference finds implausible contribute almost
//! nothing, dragging the score below the adaptive threshold
//! `gamma0 * sum(weights)` and triggering revision. Early tokens carry the
//! largest weights, so early divergence is punished hardest.

use rand::Rng;

use crate::backends::LmBackend;
use crate::error::{Error, Result};
use crate::types::{token_weight, AcceptanceMode, BlockReport, DecodeConfig, TokenId};

/// Floor-clamped probability ratio from one target and one reference
/// log-probability.
pub(crate) fn clamped_ratio(target_lp: f64, reference_lp: f64, prob_floor: f64) -> f64 {
    let floor = prob_floor.ln();
    (reference_lp.max(floor) - target_lp.max(floor)).exp()
}

/// Scores a block from already-collected per-token log-probabilities.
///
/// `start_index` is the number of generated tokens preceding the block.
/// This is the arithmetic core of [`block_score`]; the engine calls it
/// directly with log-probabilities recorded while drafting, so no model is
/// queried twice for the same position.
pub fn score_block_from_log_probs(
    tokens: &[TokenId],
    target_log_probs: &[f64],
    reference_log_probs: &[f64],
    start_index: usize,
    prompt_len: usize,
    config: &DecodeConfig,
) -> Result<BlockReport> {
    if tokens.is_empty() {
        return Err(Error::invalid_argument("cannot score an empty block"));
    }
    if tokens.len() > config.block_size_m {
        return Err(Error::invalid_argument(format!(
            "block holds {} tokens, more than block_size_m = {}",
            tokens.len(),
            config.block_size_m
        )));
    }
    if target_log_probs.len() != tokens.len() || reference_log_probs.len() != tokens.len() {
        return Err(Error::invalid_argument(
            "log-probability slices must be parallel to the block tokens",
        ));
    }

    let mut weights = Vec::with_capacity(tokens.len());
    let mut ratios = Vec::with_capacity(tokens.len());
    let mut r_beta = 0.0;
    let mut sum_weights = 0.0;
    for s in 0..tokens.len() {
        let weight = token_weight(start_index + s, prompt_len, config.weight_scheme)?;
        let ratio = clamped_ratio(target_log_probs[s], reference_log_probs[s], config.prob_floor);
        r_beta += weight * ratio;
        sum_weights += weight;
        weights.push(weight);
        ratios.push(ratio);
    }

    Ok(BlockReport {
        start_index,
        tokens: tokens.to_vec(),
        weights,
        ratios,
        r_beta,
        sum_weights,
        threshold: config.gamma0 * sum_weights,
        accepted: true,
        revised_tokens: None,
        revision_paths_explored: 0,
    })
}

/// Scores `block` as the continuation of `prompt ++ generated_prefix`,
/// querying both models once per block position.
pub fn block_score(
    target: &dyn LmBackend,
    reference: &dyn LmBackend,
    prompt: &[TokenId],
    generated_prefix: &[TokenId],
    block: &[TokenId],
    config: &DecodeConfig,
) -> Result<BlockReport> {
    if target.vocab_size() != reference.vocab_size() {
        return Err(Error::invalid_argument(format!(
            "target vocab_size {} does not match reference vocab_size {}",
            target.vocab_size(),
            reference.vocab_size()
        )));
    }
    let mut context: Vec<TokenId> =
        Vec::with_capacity(prompt.len() + generated_prefix.len() + block.len());
    context.extend_from_slice(prompt);
    context.extend_from_slice(generated_prefix);

    let mut target_lps = Vec::with_capacity(block.len());
    let mut reference_lps = Vec::with_capacity(block.len());
    for &token in block {
        target_lps.push(target.next_distribution(&context)?.log_prob(token));
        reference_lps.push(reference.next_distribution(&context)?.log_prob(token));
        context.push(token);
    }
    score_block_from_log_probs(
        block,
        &target_lps,
        &reference_lps,
        generated_prefix.len(),
        prompt.len(),
        config,
    )
}

/// Applies the configured acceptance rule to a scored block and records the
/// decision in `report.accepted`.
pub fn accept_block<R: Rng>(report: &mut BlockReport, config: &DecodeConfig, rng: &mut R) -> bool {
    let accepted = match config.acceptance_mode {
        AcceptanceMode::Threshold => report.r_beta >= report.threshold,
        AcceptanceMode::Clamped => report.r_beta.min(1.0) >= report.threshold,
        AcceptanceMode::Stochastic => {
            let p = (report.r_beta / report.sum_weights).min(1.0);
            rng.gen::<f64>() < p
        }
    };
    report.accepted = accepted;
    accepted
}
