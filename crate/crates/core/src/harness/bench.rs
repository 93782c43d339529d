//! Decodes a corpus under one decoding mode and aggregates accuracy,
//! latency, and revision metrics into a serializable report.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{exact_match, QaItem, Tokenizer};
use crate::backends::LmBackend;
use crate::engine::{best_of_n_decode, greedy_decode, md_decode};
use crate::error::{Error, Result};
use crate::types::{resampled_ratio, DecodeConfig};

/// Sampling temperature for the Best-of-N baseline's candidate draws.
pub const BON_TEMPERATURE: f64 = 0.7;

/// Which decoding loop the benchmark drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Md,
    Greedy,
    Bon,
}

impl std::fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecodeMode::Md => "md",
            DecodeMode::Greedy => "greedy",
            DecodeMode::Bon => "bon",
        })
    }
}

/// Run parameters beyond the decode config itself.
#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub mode: DecodeMode,
    /// Candidate count for the Best-of-N mode; ignored otherwise.
    pub bon_n: usize,
    /// Human-readable backend identifiers recorded in the report.
    pub target_label: String,
    pub reference_label: String,
}

/// One decoded item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub prediction: String,
    pub exact_match: bool,
    /// Fraction of output tokens that came from revision (always 0 in
    /// greedy and Best-of-N modes).
    pub resampled_ratio: f64,
    pub ms_per_token: f64,
    pub tokens_generated: usize,
    pub blocks_rejected: usize,
}

/// Corpus-level summary; recomputable from the item records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub em_rate: f64,
    pub mean_ms_per_token: f64,
    /// `1000 / mean_ms_per_token`.
    pub tokens_per_second: f64,
    pub mean_resampled_ratio: f64,
}

/// How the run was configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub mode: DecodeMode,
    pub target_backend: String,
    pub reference_backend: String,
    pub config: DecodeConfig,
    pub bon_n: usize,
    pub seed: u64,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub metadata: RunMetadata,
    pub items: Vec<ItemRecord>,
    pub aggregates: Aggregates,
}

impl BenchmarkReport {
    /// Recomputes the aggregates from the item records.
    pub fn recompute_aggregates(&self) -> Aggregates {
        aggregate(&self.items)
    }

    /// Checks that the stored aggregates match recomputation within 1e-9.
    pub fn validate(&self) -> Result<()> {
        let fresh = self.recompute_aggregates();
        let fields = [
            (self.aggregates.em_rate, fresh.em_rate, "em_rate"),
            (self.aggregates.mean_ms_per_token, fresh.mean_ms_per_token, "mean_ms_per_token"),
            (self.aggregates.tokens_per_second, fresh.tokens_per_second, "tokens_per_second"),
            (
                self.aggregates.mean_resampled_ratio,
                fresh.mean_resampled_ratio,
                "mean_resampled_ratio",
            ),
        ];
        for (stored, recomputed, name) in fields {
            if (stored - recomputed).abs() > 1e-9 {
                return Err(Error::invalid_state(format!(
                    "aggregate {name} = {stored} does not match recomputation {recomputed}"
                )));
            }
        }
        Ok(())
    }
}

fn aggregate(items: &[ItemRecord]) -> Aggregates {
    let n = items.len() as f64;
    let mean_ms_per_token = items.iter().map(|i| i.ms_per_token).sum::<f64>() / n;
    Aggregates {
        em_rate: items.iter().filter(|i| i.exact_match).count() as f64 / n,
        mean_ms_per_token,
        tokens_per_second: 1000.0 / mean_ms_per_token,
        mean_resampled_ratio: items.iter().map(|i| i.resampled_ratio).sum::<f64>() / n,
    }
}

/// Decodes every corpus item under the selected mode and assembles the
/// report. Prompts are tokenized against the target's vocabulary labels,
/// falling back to the reference's when the target has none (remote
/// backends do not carry labels). The first failing item aborts the run
/// with its id; skipping items would silently distort the aggregates.
pub fn run_benchmark(
    corpus: &[QaItem],
    target: &dyn LmBackend,
    reference: &dyn LmBackend,
    config: &DecodeConfig,
    options: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    if corpus.is_empty() {
        return Err(Error::invalid_argument("corpus holds no items"));
    }
    if options.mode == DecodeMode::Bon && options.bon_n == 0 {
        return Err(Error::invalid_argument("bon_n must be >= 1 in Best-of-N mode"));
    }
    config.validate()?;
    let tokenizer = Tokenizer::from_backend(target)
        .or_else(|_| Tokenizer::from_backend(reference))
        .map_err(|_| {
            Error::invalid_argument("neither backend exposes vocabulary labels")
        })?;

    let mut items = Vec::with_capacity(corpus.len());
    for (index, item) in corpus.iter().enumerate() {
        let record = decode_item(item, index, target, reference, config, options, &tokenizer)
            .map_err(|e| {
                Error::invalid_state(format!("while decoding item '{}': {e}", item.id))
            })?;
        items.push(record);
    }

    let aggregates = aggregate(&items);
    Ok(BenchmarkReport {
        metadata: RunMetadata {
            mode: options.mode,
            target_backend: options.target_label.clone(),
            reference_backend: options.reference_label.clone(),
            config: config.clone(),
            bon_n: options.bon_n,
            seed: config.seed,
            timestamp: chrono::Utc::now().to_rfc3339(),
        },
        items,
        aggregates,
    })
}

fn decode_item(
    item: &QaItem,
    index: usize,
    target: &dyn LmBackend,
    reference: &dyn LmBackend,
    config: &DecodeConfig,
    options: &BenchmarkOptions,
    tokenizer: &Tokenizer,
) -> Result<ItemRecord> {
    let prompt = tokenizer.encode(&item.prompt)?;
    let started = Instant::now();
    let (tokens, resampled, blocks_rejected) = match options.mode {
        DecodeMode::Greedy => (greedy_decode(target, &prompt, config.max_tokens)?, 0.0, 0),
        DecodeMode::Md => {
            let (tokens, trace) = md_decode(target, reference, &prompt, config)?;
            let resampled = resampled_ratio(&trace)?;
            (tokens, resampled, trace.blocks_rejected())
        }
        DecodeMode::Bon => {
            // Stagger the per-item seed so candidates differ across items.
            let seed = config.seed.wrapping_add(index as u64);
            let (tokens, _) = best_of_n_decode(
                target,
                reference,
                &prompt,
                options.bon_n,
                BON_TEMPERATURE,
                config,
                seed,
            )?;
            (tokens, 0.0, 0)
        }
    };
    let elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;
    let prediction = tokenizer.decode(&tokens)?;
    Ok(ItemRecord {
        id: item.id.clone(),
        prediction: prediction.clone(),
        exact_match: exact_match(&prediction, &item.answers),
        resampled_ratio: resampled,
        ms_per_token: (elapsed_ms / tokens.len().max(1) as f64).max(1e-9),
        tokens_generated: tokens.len(),
        blocks_rejected,
    })
}

/// Output encodings for [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

/// The aggregate table as markdown: one row for this run, with the
/// resampled share rendered as a percentage with one decimal.
pub fn render_markdown(report: &BenchmarkReport) -> String {
    let m = &report.metadata;
    let a = &report.aggregates;
    format!(
        "# Benchmark: {mode}\n\n\
         - target: {target}\n\
         - reference: {reference}\n\
         - items: {items}\n\
         - gamma0: {gamma0}, block: {block}, branch: {branch}, keep: {keep}\n\
         - seed: {seed}\n\
         - timestamp: {timestamp}\n\n\
         | Method | EM | ms/token | tokens/s | Resampled% |\n\
         |--------|----|----------|----------|------------|\n\
         | {mode} | {em:.3} | {ms:.4} | {tps:.1} | {resampled:.1}% |\n",
        mode = m.mode,
        target = m.target_backend,
        reference = m.reference_backend,
        items = report.items.len(),
        gamma0 = m.config.gamma0,
        block = m.config.block_size_m,
        branch = m.config.branch_n,
        keep = m.config.keep_k,
        seed = m.seed,
        timestamp = m.timestamp,
        em = a.em_rate,
        ms = a.mean_ms_per_token,
        tps = a.tokens_per_second,
        resampled = 100.0 * a.mean_resampled_ratio,
    )
}

/// Writes the report to `out_path`: json keeps full fidelity, markdown
/// renders the aggregate table.
pub fn emit_report(
    report: &BenchmarkReport,
    out_path: &Path,
    format: ReportFormat,
) -> Result<()> {
    let body = match format {
        ReportFormat::Json => {
            let mut json = serde_json::to_string_pretty(report)
                .map_err(|e| Error::parse(e.to_string()))?;
            json.push('\n');
            json
        }
        ReportFormat::Markdown => render_markdown(report),
    };
    std::fs::write(out_path, body).map_err(|e| Error::io(out_path, e))
}

/// Reads back a json report written by [`emit_report`].
pub fn load_report(path: &Path) -> Result<BenchmarkReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::parse(format!("{}: {e}", path.display())))
}
