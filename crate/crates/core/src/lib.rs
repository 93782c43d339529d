//! Monitored decoding for language models.
//!
//! The engine drafts tokens greedily from a target model and checks every
//! block of `m` fresh tokens with a weighted sum of reference-to-target
//! probability ratios. Blocks that score below an adaptive threshold are
//! rejected and regenerated by a pruned tree search that expands the
//! target's top-N continuations and keeps the K best-scoring paths. The
//! target and reference are arbitrary [`backends::LmBackend`]
//! implementations: probability tables, n-gram models, perturbation
//! wrappers for planting known errors, or a remote process speaking a
//! line-delimited JSON protocol.
//!
//! [`harness`] adds the evaluation side: QA corpora, exact-match scoring, a
//! synthetic hallucination benchmark with known ground truth, a benchmark
//! runner, and a randomized sweep that checks the tree search against a
//! brute-force oracle.

pub mod backends;
pub mod engine;
mod error;
pub mod harness;
pub mod monitor;
pub mod revision;
pub mod types;

pub use backends::{
    perturb_backend, serve_backend, LmBackend, NgramLm, PerturbationEdit, PerturbedLm,
    RemoteLm, TableLm, TableLmSpec, TableRowSpec, DEFAULT_REMOTE_TIMEOUT,
};
pub use engine::{best_of_n_decode, greedy_decode, md_decode};
pub use error::{Error, Result};
pub use harness::{
    emit_report, exact_match, load_jsonl_corpus, load_report, normalize, oracle_check_sweep,
    random_decode_instance, render_markdown, run_benchmark, synth_hallucination_suite,
    write_jsonl_corpus, Aggregates, BenchmarkOptions, BenchmarkReport, DecodeMode, ItemRecord,
    OracleSweepReport, QaItem, ReportFormat, RunMetadata, SynthItemTruth, SynthSuite, Tokenizer,
    BON_TEMPERATURE,
};
pub use monitor::{accept_block, block_score, score_block_from_log_probs};
pub use revision::{
    exhaustive_revision_oracle, expand_path, fact_check, revise_block, revise_block_with_depth,
    PathCandidate, RevisionStats,
};
pub use types::{
    resampled_ratio, token_weight, AcceptanceMode, BlockReport, DecodeConfig, DecodeTrace,
    Distribution, TokenId, TokenSeq, WeightScheme, PROB_SUM_TOLERANCE,
};
