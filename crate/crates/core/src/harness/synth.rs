//! Synthetic hallucination benchmark.
//!
//! Each item is a unique digit-string prompt whose clean continuation is a
//! four-token answer span followed by end-of-sequence. The reference model
//! is a table peaked at 0.85 on the correct next token at every step; the
//! target model is the same table with, on a chosen fraction of items, one
//! wrong token boosted to high probability at one known position. The
//! boosted token flips the greedy draft there, so greedy exact match is
//! exactly `1 - error_rate`, while the monitor sees the boosted token's
//! tiny reference/target ratio and a revising decoder can recover the
//! answer.
//!
//! The vocabulary keeps digit tokens and answer tokens disjoint, and every
//! table row starts with the item's full digit prompt. A row can therefore
//! only ever fire on its own item's trajectory (any other alignment would
//! have to match a digit token against an answer token), which keeps the
//! per-item constructions independent.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::QaItem;
use crate::backends::{
    perturb_backend, PerturbationEdit, PerturbedLm, TableLm, TableLmSpec, TableRowSpec,
};
use crate::error::{Error, Result};
use crate::types::{TokenId, TokenSeq};

/// Answer span length, excluding the end-of-sequence token.
const SPAN: usize = 4;
/// Probability of the correct next token in every reference row.
const PEAK: f64 = 0.85;
/// Span positions eligible for a perturbation. With the default monitor
/// settings (gamma0 0.8, block size 3) a boost at span position 2 lands at
/// the cheap end of a block and scores just above the rejection bar, so it
/// is excluded to keep every planted error detectable.
const EDIT_POSITIONS: [usize; 3] = [0, 1, 3];

/// Everything the suite generator produced: the corpus, both model specs,
/// the raw edits, and per-item ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSuite {
    pub corpus: Vec<QaItem>,
    /// The clean model; its greedy continuation of each prompt is the
    /// recorded answer.
    pub reference_spec: TableLmSpec,
    /// The reference with the planted boosts applied to the affected rows.
    pub target_spec: TableLmSpec,
    /// The same boosts as wrapper edits over the reference.
    pub edits: Vec<PerturbationEdit>,
    pub ground_truth: Vec<SynthItemTruth>,
}

/// Ground truth for one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthItemTruth {
    pub id: String,
    /// The correct answer span, token by token (end-of-sequence excluded).
    pub answer_tokens: TokenSeq,
    /// Span position of the planted error, if this item received one.
    pub perturbed_position: Option<usize>,
    /// The wrong token boosted at that position.
    pub boosted_token: Option<TokenId>,
}

impl SynthSuite {
    pub fn reference(&self) -> Result<TableLm> {
        TableLm::from_spec(&self.reference_spec)
    }

    /// The perturbed target as a materialized table (what the generated
    /// `target.json` holds).
    pub fn target_table(&self) -> Result<TableLm> {
        TableLm::from_spec(&self.target_spec)
    }

    /// The perturbed target as edits over the clean reference; behaves
    /// identically to [`SynthSuite::target_table`] on every context.
    pub fn target_wrapper(&self) -> Result<PerturbedLm<TableLm>> {
        perturb_backend(self.reference()?, self.edits.clone())
    }
}

fn padded_labels(prefix: char, count: usize) -> Vec<String> {
    // Uniform width so no label is a prefix of another; otherwise an
    // answer span ending in the shorter label could exact-match inside a
    // prediction containing the longer one.
    let width = count.saturating_sub(1).to_string().len();
    (0..count).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// Generates a reproducible suite of `size` items over `vocab_size` tokens
/// where a `round(size * error_rate)` subset of items has one wrong token
/// boosted to `boosted_prob` at a known span position.
///
/// `vocab_size` must be at least 4 (end-of-sequence, two digits, one
/// answer token); `boosted_prob` must exceed 0.5 so the boost is
/// guaranteed to flip the greedy draft.
pub fn synth_hallucination_suite(
    seed: u64,
    size: usize,
    vocab_size: usize,
    error_rate: f64,
    boosted_prob: f64,
) -> Result<SynthSuite> {
    if size == 0 {
        return Err(Error::invalid_argument("suite size must be >= 1"));
    }
    if vocab_size < 4 {
        return Err(Error::invalid_argument(format!(
            "vocab_size must be >= 4, got {vocab_size}"
        )));
    }
    if !(error_rate > 0.0 && error_rate < 1.0) {
        return Err(Error::invalid_argument(format!(
            "error_rate must lie strictly between 0 and 1, got {error_rate}"
        )));
    }
    if !(boosted_prob > 0.5 && boosted_prob < 1.0) {
        return Err(Error::invalid_argument(format!(
            "boosted_prob must lie strictly between 0.5 and 1, got {boosted_prob}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Vocabulary layout: </s> at 0, digit tokens, then answer tokens.
    let digits = (vocab_size - 2).min(8.min(((vocab_size - 1) / 2).max(2)));
    let answers = vocab_size - 1 - digits;
    let digit_ids: Vec<TokenId> = (1..=digits as TokenId).collect();
    let answer_ids: Vec<TokenId> =
        (digits as TokenId + 1..(digits + answers) as TokenId + 1).collect();
    let mut vocab = vec!["</s>".to_string()];
    vocab.extend(padded_labels('d', digits));
    vocab.extend(padded_labels('w', answers));

    // Prompt length: enough base-`digits` positions to give every item a
    // unique digit string.
    let mut prompt_len = 1usize;
    let mut capacity = digits as u64;
    while capacity < size as u64 {
        capacity = capacity.saturating_mul(digits as u64);
        prompt_len += 1;
    }

    let spread: Vec<TokenId> =
        std::iter::once(0).chain(answer_ids.iter().copied()).collect();
    let share = 0.15 / answers as f64;
    let row_probs = |peak: TokenId| -> Vec<f64> {
        let mut probs = vec![0.0; vocab_size];
        for &t in &spread {
            probs[t as usize] = share;
        }
        probs[peak as usize] = PEAK;
        probs
    };

    let mut corpus = Vec::with_capacity(size);
    let mut ground_truth = Vec::with_capacity(size);
    let mut rows = Vec::with_capacity(size * (SPAN + 1));
    let mut prompts: Vec<TokenSeq> = Vec::with_capacity(size);
    let mut spans: Vec<TokenSeq> = Vec::with_capacity(size);

    for item in 0..size {
        let mut prompt = TokenSeq::with_capacity(prompt_len);
        let mut remainder = item;
        for _ in 0..prompt_len {
            prompt.push(digit_ids[remainder % digits]);
            remainder /= digits;
        }
        prompt.reverse();

        let span: TokenSeq =
            (0..SPAN).map(|_| answer_ids[rng.gen_range(0..answers)]).collect();

        // One row per span position plus one that closes with eos.
        for position in 0..=SPAN {
            let mut suffix = prompt.clone();
            suffix.extend_from_slice(&span[..position]);
            let peak = if position < SPAN { span[position] } else { 0 };
            rows.push(TableRowSpec {
                suffix: suffix.iter().map(|&t| vocab[t as usize].clone()).collect(),
                probs: row_probs(peak),
            });
        }

        let id = format!("synth-{item:04}");
        let prompt_text: Vec<&str> =
            prompt.iter().map(|&t| vocab[t as usize].as_str()).collect();
        let answer_text: Vec<&str> =
            span.iter().map(|&t| vocab[t as usize].as_str()).collect();
        corpus.push(QaItem {
            id: id.clone(),
            prompt: prompt_text.join(" "),
            answers: vec![answer_text.join(" ")],
        });
        ground_truth.push(SynthItemTruth {
            id,
            answer_tokens: span.clone(),
            perturbed_position: None,
            boosted_token: None,
        });
        prompts.push(prompt);
        spans.push(span);
    }

    let reference_spec = TableLmSpec {
        vocab,
        default: row_probs(0),
        rows,
        eos: Some("</s>".to_string()),
    };

    // Plant exactly round(size * error_rate) errors.
    let planted = (size as f64 * error_rate).round() as usize;
    let mut chosen = sample(&mut rng, size, planted).into_vec();
    chosen.sort_unstable();
    let mut edits = Vec::with_capacity(planted);
    for item in chosen {
        let position = EDIT_POSITIONS[rng.gen_range(0..EDIT_POSITIONS.len())];
        let correct = spans[item][position];
        let pool: Vec<TokenId> =
            spread.iter().copied().filter(|&t| t != correct).collect();
        let wrong = pool[rng.gen_range(0..pool.len())];

        let mut suffix = prompts[item].clone();
        suffix.extend_from_slice(&spans[item][..position]);
        edits.push(PerturbationEdit {
            match_context_suffix: suffix,
            boosted_token: wrong,
            boosted_prob,
        });
        ground_truth[item].perturbed_position = Some(position);
        ground_truth[item].boosted_token = Some(wrong);
    }

    // Materialize the same boosts into a standalone table spec. Each edit
    // context is exactly one existing row's suffix, and no longer row can
    // shadow it (the digit/answer boundary would have to misalign), so the
    // table and the wrapper agree on every context.
    let mut target_spec = reference_spec.clone();
    for edit in &edits {
        let suffix_labels: Vec<String> = edit
            .match_context_suffix
            .iter()
            .map(|&t| target_spec.vocab[t as usize].clone())
            .collect();
        let row = target_spec
            .rows
            .iter_mut()
            .find(|row| row.suffix == suffix_labels)
            .expect("every edit context has a matching row by construction");
        let wrong = edit.boosted_token as usize;
        let scale = (1.0 - edit.boosted_prob) / (1.0 - row.probs[wrong]);
        for (token, prob) in row.probs.iter_mut().enumerate() {
            *prob = if token == wrong { edit.boosted_prob } else { *prob * scale };
        }
    }

    Ok(SynthSuite { corpus, reference_spec, target_spec, edits, ground_truth })
}
