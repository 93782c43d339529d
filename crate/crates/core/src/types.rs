//! Shared vocabulary of the decoding engine: token ids, next-token
//! distributions, the decode configuration, and the per-block / per-run
//! reports every other module produces or consumes.
//!
//! Probabilities are carried as natural log-probabilities internally and
//! renormalized at construction, so downstream ratio arithmetic can work in
//! log space. The linear view exposed by [`Distribution::prob`] always sums
//! to 1 within 1e-9.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a model's vocabulary. Always `< vocab_size` of the backend
/// that produced the distribution it is used with.
pub type TokenId = u32;

/// A (possibly empty) sequence of token ids: prompts, generated text, blocks.
pub type TokenSeq = Vec<TokenId>;

/// Linear-probability sums are accepted within this tolerance at
/// construction, then renormalized exactly.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Distribution
// ---------------------------------------------------------------------------

/// A normalized next-token distribution over a fixed vocabulary.
///
/// Stored as log-probabilities; zero-probability entries are `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    log_probs: Vec<f64>,
}

impl Distribution {
    /// Builds from linear probabilities. Entries must be non-negative and
    /// finite and sum to 1 within [`PROB_SUM_TOLERANCE`]; the stored
    /// distribution is renormalized exactly.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid_argument("distribution over empty vocabulary"));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::invalid_argument(format!(
                    "probability at token {i} is {p}, expected a finite value >= 0"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::invalid_argument(format!(
                "probabilities sum to {sum}, expected 1 within {PROB_SUM_TOLERANCE}"
            )));
        }
        let log_probs = probs.iter().map(|&p| (p / sum).ln()).collect();
        Ok(Distribution { log_probs })
    }

    /// Builds from unnormalized log-weights (e.g. raw model logprobs),
    /// normalizing via log-sum-exp. Entries may be `-inf` but not NaN or
    /// `+inf`, and at least one must be finite.
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(Error::invalid_argument("distribution over empty vocabulary"));
        }
        let mut max = f64::NEG_INFINITY;
        for (i, &lw) in log_weights.iter().enumerate() {
            if lw.is_nan() || lw == f64::INFINITY {
                return Err(Error::invalid_argument(format!(
                    "log-weight at token {i} is {lw}"
                )));
            }
            if lw > max {
                max = lw;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::invalid_argument(
                "all log-weights are -inf; no probability mass",
            ));
        }
        let log_norm = max + log_weights.iter().map(|&lw| (lw - max).exp()).sum::<f64>().ln();
        let log_probs = log_weights.iter().map(|&lw| lw - log_norm).collect();
        Ok(Distribution { log_probs })
    }

    /// Uniform distribution over `n` tokens.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid_argument("distribution over empty vocabulary"));
        }
        Ok(Distribution { log_probs: vec![-(n as f64).ln(); n] })
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    /// Linear probability of `token`. Panics if out of range.
    pub fn prob(&self, token: TokenId) -> f64 {
        self.log_probs[token as usize].exp()
    }

    /// Natural log-probability of `token` (`-inf` for zero mass).
    pub fn log_prob(&self, token: TokenId) -> f64 {
        self.log_probs[token as usize]
    }

    /// Materializes the linear view; sums to 1 within 1e-9.
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|&lp| lp.exp()).collect()
    }

    /// Highest-probability token; ties broken toward the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0usize;
        for i in 1..self.log_probs.len() {
            if self.log_probs[i] > self.log_probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// The `n` highest-probability tokens in descending probability order,
    /// ties broken toward ascending id. Returns fewer than `n` only when the
    /// vocabulary is smaller than `n`.
    pub fn top_n(&self, n: usize) -> Vec<TokenId> {
        let mut ids: Vec<usize> = (0..self.log_probs.len()).collect();
        ids.sort_by(|&a, &b| {
            self.log_probs[b]
                .total_cmp(&self.log_probs[a])
                .then_with(|| a.cmp(&b))
        });
        ids.truncate(n);
        ids.into_iter().map(|i| i as TokenId).collect()
    }

    /// Checks the normalization invariant on the linear view.
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.log_probs.iter().map(|&lp| lp.exp()).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_argument(format!(
                "distribution sums to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// How a monitored block's score is turned into an accept/reject decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceMode {
    /// Accept iff the block score reaches the adaptive threshold
    /// `gamma0 * sum_weights`.
    Threshold,
    /// Accept iff `min(1, score)` reaches the same threshold. Early blocks
    /// carry weight sums above 1, so thresholds above 1 reject everything;
    /// useful only with small `gamma0`.
    Clamped,
    /// Accept with probability `min(1, score / sum_weights)`, drawn from the
    /// seeded run RNG.
    Stochastic,
}

/// Denominator used for per-token monitor weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `1 / (generated_before + 1)`: counts previously generated tokens
    /// only, shifted by one so the first token is well-defined.
    GeneratedPlusOne,
    /// `1 / (prompt_len + generated_before)`: counts the full visible
    /// context. Undefined (an error) when both are zero.
    FullContext,
}

/// All knobs of a decoding run. Construct with `DecodeConfig::default()` and
/// override fields, then call [`DecodeConfig::validate`] before use; the
/// engine validates on entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Block size: number of freshly generated tokens monitored at once.
    pub block_size_m: usize,
    /// Branching factor of the revision tree (children per expanded path).
    pub branch_n: usize,
    /// Paths retained after each revision layer's pruning step.
    pub keep_k: usize,
    /// Threshold coefficient in `[0, 1]`. Zero accepts every block and makes
    /// the engine equivalent to greedy decoding.
    pub gamma0: f64,
    /// Maximum number of generated tokens per run.
    pub max_tokens: usize,
    pub acceptance_mode: AcceptanceMode,
    pub weight_scheme: WeightScheme,
    /// Probabilities below this floor are clamped before forming
    /// target/reference ratios. Must lie in `(0, 1e-3]`.
    pub prob_floor: f64,
    /// Seed for all stochastic choices (stochastic acceptance, sampling).
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            block_size_m: 3,
            branch_n: 2,
            keep_k: 2,
            gamma0: 0.8,
            max_tokens: 64,
            acceptance_mode: AcceptanceMode::Threshold,
            weight_scheme: WeightScheme::GeneratedPlusOne,
            prob_floor: 1e-10,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    /// Checks every field constraint and returns the full list of
    /// violations, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.block_size_m == 0 {
            violations.push("block_size_m must be >= 1".to_string());
        }
        if self.branch_n == 0 {
            violations.push("branch_n must be >= 1".to_string());
        }
        if self.keep_k == 0 {
            violations.push("keep_k must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.gamma0) || self.gamma0.is_nan() {
            violations.push(format!("gamma0 must lie in [0, 1], got {}", self.gamma0));
        }
        if self.max_tokens == 0 {
            violations.push("max_tokens must be >= 1".to_string());
        }
        if !(self.prob_floor > 0.0 && self.prob_floor <= 1e-3) {
            violations.push(format!(
                "prob_floor must lie in (0, 1e-3], got {}",
                self.prob_floor
            ));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(violations))
        }
    }
}

/// Weight of the token at position `generated_before` (tokens generated
/// earlier in the run, prompt excluded). Later tokens weigh less, so errors
/// introduced early in a response are penalized hardest.
pub fn token_weight(generated_before: usize, prompt_len: usize, scheme: WeightScheme) -> Result<f64> {
    match scheme {
        WeightScheme::GeneratedPlusOne => Ok(1.0 / (generated_before as f64 + 1.0)),
        WeightScheme::FullContext => {
            let denom = prompt_len + generated_before;
            if denom == 0 {
                return Err(Error::invalid_argument(
                    "full_context weight undefined for empty context (prompt_len + generated_before == 0)",
                ));
            }
            Ok(1.0 / denom as f64)
        }
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Everything the monitor recorded about one block: the drafted tokens,
/// their weights and probability ratios, the resulting score and decision,
/// and (for rejected blocks) the replacement produced by revision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    /// Number of generated tokens preceding this block (prompt excluded).
    pub start_index: usize,
    /// The drafted block, at most `block_size_m` tokens.
    pub tokens: TokenSeq,
    /// Per-token monitor weights, parallel to `tokens`.
    pub weights: Vec<f64>,
    /// Per-token floor-clamped reference/target probability ratios.
    pub ratios: Vec<f64>,
    /// Weighted ratio sum: `sum(weights[s] * ratios[s])`.
    pub r_beta: f64,
    pub sum_weights: f64,
    /// Adaptive acceptance threshold: `gamma0 * sum_weights`.
    pub threshold: f64,
    pub accepted: bool,
    /// Replacement tokens; present exactly when the block was rejected.
    pub revised_tokens: Option<TokenSeq>,
    /// Search paths created while revising this block (0 when accepted).
    pub revision_paths_explored: usize,
}

impl BlockReport {
    /// Recomputes `r_beta` from the stored weights and ratios.
    pub fn recompute_r_beta(&self) -> f64 {
        self.weights.iter().zip(&self.ratios).map(|(w, r)| w * r).sum()
    }

    /// The tokens this block contributed to the final output.
    pub fn output_tokens(&self) -> &[TokenId] {
        match &self.revised_tokens {
            Some(revised) => revised,
            None => &self.tokens,
        }
    }

    /// Checks internal consistency against the config that produced it.
    pub fn validate(&self, config: &DecodeConfig) -> Result<()> {
        if self.tokens.is_empty() || self.tokens.len() > config.block_size_m {
            return Err(Error::invalid_argument(format!(
                "block holds {} tokens, expected 1..={}",
                self.tokens.len(),
                config.block_size_m
            )));
        }
        if self.weights.len() != self.tokens.len() || self.ratios.len() != self.tokens.len() {
            return Err(Error::invalid_argument(
                "weights and ratios must be parallel to tokens",
            ));
        }
        if (self.r_beta - self.recompute_r_beta()).abs() > 1e-12 {
            return Err(Error::invalid_argument(format!(
                "r_beta {} does not match recomputation {}",
                self.r_beta,
                self.recompute_r_beta()
            )));
        }
        let sum: f64 = self.weights.iter().sum();
        if (self.sum_weights - sum).abs() > 1e-12 {
            return Err(Error::invalid_argument("sum_weights does not match weights"));
        }
        if (self.threshold - config.gamma0 * self.sum_weights).abs() > 1e-12 {
            return Err(Error::invalid_argument(format!(
                "threshold {} is not gamma0 * sum_weights = {}",
                self.threshold,
                config.gamma0 * self.sum_weights
            )));
        }
        if self.accepted != self.revised_tokens.is_none() {
            return Err(Error::invalid_argument(
                "revised_tokens must be present exactly when the block was rejected",
            ));
        }
        Ok(())
    }
}

/// Full record of one decoding run: per-block reports, the final output,
/// and work/latency counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub prompt: TokenSeq,
    pub blocks: Vec<BlockReport>,
    /// Concatenation of each block's output tokens.
    pub final_tokens: TokenSeq,
    pub target_model_calls: usize,
    pub reference_model_calls: usize,
    /// Mean wall-clock milliseconds per generated token.
    pub wall_time_per_token: f64,
    pub tokens_per_second: f64,
}

impl DecodeTrace {
    /// Number of rejected (revised) blocks.
    pub fn blocks_rejected(&self) -> usize {
        self.blocks.iter().filter(|b| !b.accepted).count()
    }

    /// Checks per-block consistency plus the reconstruction invariant that
    /// `final_tokens` is exactly the concatenation of block outputs.
    pub fn validate(&self, config: &DecodeConfig) -> Result<()> {
        let mut reconstructed = TokenSeq::new();
        for block in &self.blocks {
            block.validate(config)?;
            reconstructed.extend_from_slice(block.output_tokens());
        }
        if reconstructed != self.final_tokens {
            return Err(Error::invalid_argument(
                "final_tokens does not equal the concatenation of block outputs",
            ));
        }
        if !self.final_tokens.is_empty() {
            if self.wall_time_per_token <= 0.0 || self.tokens_per_second <= 0.0 {
                return Err(Error::invalid_argument("timing fields must be positive"));
            }
            let implied = 1000.0 / self.wall_time_per_token;
            if (implied - self.tokens_per_second).abs() > 0.01 * self.tokens_per_second {
                return Err(Error::invalid_argument(
                    "tokens_per_second inconsistent with wall_time_per_token",
                ));
            }
        }
        Ok(())
    }
}

/// Fraction of final tokens produced by revision rather than the initial
/// draft. Errors on a trace with no final tokens.
pub fn resampled_ratio(trace: &DecodeTrace) -> Result<f64> {
    if trace.final_tokens.is_empty() {
        return Err(Error::invalid_argument(
            "resampled ratio undefined for an empty generation",
        ));
    }
    let revised: usize = trace
        .blocks
        .iter()
        .filter_map(|b| b.revised_tokens.as_ref().map(|r| r.len()))
        .sum();
    Ok(revised as f64 / trace.final_tokens.len() as f64)
}
