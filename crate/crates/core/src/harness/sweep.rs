//! Randomized equivalence sweep between the pruned revision search and the
//! brute-force oracle, plus a random instance generator for decode-level
//! property checks.
//!
//! Each sweep trial draws a random pair of table models, a random prompt
//! and prefix, and search dimensions small enough to enumerate, then runs
//! the tree search with pruning disabled (keep = branch^depth). The search
//! must return the oracle's exact path and score; any divergence is a
//! correctness bug in expansion, scoring, or tie-breaking.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backends::{LmBackend, NgramLm, TableLm, TableLmSpec, TableRowSpec};
use crate::error::Result;
use crate::revision::{exhaustive_revision_oracle, revise_block};
use crate::types::{DecodeConfig, TokenId, TokenSeq, WeightScheme};

/// Outcome of an equivalence sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleSweepReport {
    pub trials: usize,
    pub mismatches: usize,
    /// Description of the first diverging trial, when any.
    pub first_mismatch: Option<String>,
}

fn random_probs<R: Rng>(rng: &mut R, vocab: usize) -> Vec<f64> {
    // A positive floor keeps rows comfortably inside the table loader's
    // row-sum tolerance after normalization.
    let weights: Vec<f64> = (0..vocab).map(|_| rng.gen::<f64>() + 0.01).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn random_table<R: Rng>(rng: &mut R, vocab: usize, allow_eos: bool) -> Result<TableLm> {
    let labels: Vec<String> = (0..vocab).map(|i| format!("t{i}")).collect();
    let mut rows: Vec<TableRowSpec> = Vec::new();
    let mut suffixes: Vec<Vec<TokenId>> = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        let len = rng.gen_range(1..=2usize);
        let suffix: Vec<TokenId> =
            (0..len).map(|_| rng.gen_range(0..vocab) as TokenId).collect();
        if suffixes.contains(&suffix) {
            continue;
        }
        rows.push(TableRowSpec {
            suffix: suffix.iter().map(|&t| labels[t as usize].clone()).collect(),
            probs: random_probs(rng, vocab),
        });
        suffixes.push(suffix);
    }
    let eos = if allow_eos && rng.gen_bool(0.25) {
        Some(labels[rng.gen_range(0..vocab)].clone())
    } else {
        None
    };
    TableLm::from_spec(&TableLmSpec {
        vocab: labels,
        default: random_probs(rng, vocab),
        rows,
        eos,
    })
}

/// Runs `trials` random search-versus-oracle comparisons. A trial
/// mismatches when the pruning-free search returns a different path than
/// the oracle or a score differing by more than 1e-12.
pub fn oracle_check_sweep(seed: u64, trials: usize) -> Result<OracleSweepReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    let mut first_mismatch = None;

    for trial in 0..trials {
        let vocab = rng.gen_range(2..=8usize);
        let depth = rng.gen_range(1..=3usize);
        let branch = rng.gen_range(1..=3usize);
        let target = random_table(&mut rng, vocab, true)?;
        let reference = random_table(&mut rng, vocab, false)?;
        let prompt: TokenSeq = (0..rng.gen_range(0..=3))
            .map(|_| rng.gen_range(0..vocab) as TokenId)
            .collect();
        let prefix: TokenSeq = (0..rng.gen_range(0..=2))
            .map(|_| rng.gen_range(0..vocab) as TokenId)
            .collect();
        // The full-context scheme needs at least one token ahead of the
        // first weighted position.
        let scheme = if (!prompt.is_empty() || !prefix.is_empty()) && rng.gen_bool(0.5) {
            WeightScheme::FullContext
        } else {
            WeightScheme::GeneratedPlusOne
        };
        let config = DecodeConfig {
            block_size_m: depth,
            branch_n: branch,
            keep_k: branch.pow(depth as u32),
            weight_scheme: scheme,
            ..DecodeConfig::default()
        };

        let (searched, stats) = revise_block(&target, &reference, &prompt, &prefix, &config)?;
        let (oracle, oracle_score) =
            exhaustive_revision_oracle(&target, &reference, &prompt, &prefix, &config)?;
        if searched != oracle || (stats.winner_score - oracle_score).abs() > 1e-12 {
            mismatches += 1;
            first_mismatch.get_or_insert_with(|| {
                format!(
                    "trial {trial}: search {searched:?} (score {}) vs oracle {oracle:?} \
                     (score {oracle_score}) with vocab {vocab}, depth {depth}, branch {branch}",
                    stats.winner_score
                )
            });
        }
    }

    Ok(OracleSweepReport { trials, mismatches, first_mismatch })
}

/// Draws a random (backend, prompt) pair for decode-level property checks:
/// half table models, half n-gram models trained on a random word soup.
pub fn random_decode_instance<R: Rng>(rng: &mut R) -> Result<(Box<dyn LmBackend>, TokenSeq)> {
    if rng.gen_bool(0.5) {
        let vocab = rng.gen_range(3..=8usize);
        let table = random_table(rng, vocab, true)?;
        let prompt: TokenSeq = (0..rng.gen_range(1..=4))
            .map(|_| rng.gen_range(0..vocab) as TokenId)
            .collect();
        Ok((Box::new(table), prompt))
    } else {
        const WORDS: [&str; 5] = ["red", "blue", "green", "gold", "jade"];
        let length = rng.gen_range(30..=60);
        let corpus: Vec<&str> =
            (0..length).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
        let order = rng.gen_range(2..=3);
        let add_k = [0.0, 0.5, 1.0][rng.gen_range(0..3)];
        let ngram = NgramLm::train(&corpus.join(" "), order, add_k)?;
        let vocab = ngram.vocab_size();
        let prompt: TokenSeq = (0..rng.gen_range(1..=4))
            .map(|_| rng.gen_range(0..vocab) as TokenId)
            .collect();
        Ok((Box::new(ngram), prompt))
    }
}
