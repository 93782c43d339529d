//! Benchmark plumbing: QA corpora, exact-match scoring, tokenization
//! against a backend vocabulary, the synthetic hallucination suite, the
//! benchmark runner, and the oracle equivalence sweep.

mod bench;
mod sweep;
mod synth;

pub use bench::{
    emit_report, load_report, render_markdown, run_benchmark, Aggregates, BenchmarkOptions,
    BenchmarkReport, DecodeMode, ItemRecord, ReportFormat, RunMetadata, BON_TEMPERATURE,
};
pub use sweep::{oracle_check_sweep, random_decode_instance, OracleSweepReport};
pub use synth::{synth_hallucination_suite, SynthItemTruth, SynthSuite};

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::LmBackend;
use crate::error::{Error, Result};
use crate::types::{TokenId, TokenSeq};

/// One question-answering item: a prompt and at least one gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub prompt: String,
    pub answers: Vec<String>,
}

/// Lowercases and collapses every whitespace run to a single space,
/// trimming the ends. Both sides of an exact-match comparison go through
/// this.
pub fn normalize(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when any normalized gold answer occurs as a substring of the
/// normalized prediction.
pub fn exact_match(prediction: &str, answers: &[String]) -> bool {
    let prediction = normalize(prediction);
    answers.iter().any(|answer| prediction.contains(&normalize(answer)))
}

/// Reads a corpus of one JSON object per line. Blank lines are ignored;
/// malformed lines and duplicate ids report their 1-based line number.
pub fn load_jsonl_corpus(path: &Path) -> Result<Vec<QaItem>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (number, line) in text.lines().enumerate() {
        let number = number + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item: QaItem = serde_json::from_str(line).map_err(|e| {
            Error::parse(format!("{}:{number}: {e}", path.display()))
        })?;
        if item.answers.is_empty() {
            return Err(Error::parse(format!(
                "{}:{number}: item '{}' has no answers",
                path.display(),
                item.id
            )));
        }
        if !seen.insert(item.id.clone()) {
            return Err(Error::parse(format!(
                "{}:{number}: duplicate item id '{}'",
                path.display(),
                item.id
            )));
        }
        items.push(item);
    }
    Ok(items)
}

/// Writes a corpus in the format [`load_jsonl_corpus`] reads.
pub fn write_jsonl_corpus(path: &Path, items: &[QaItem]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| Error::parse(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Whitespace tokenizer over a backend's vocabulary labels. Corpus text is
/// split on whitespace and each word must be a vocabulary label; decoding
/// joins labels with single spaces and drops the end-of-sequence token.
pub struct Tokenizer {
    labels: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: Option<TokenId>,
}

impl Tokenizer {
    /// Builds a tokenizer from the backend's labels; errors when the
    /// backend does not expose any.
    pub fn from_backend(backend: &dyn LmBackend) -> Result<Self> {
        let labels = backend
            .vocab_labels()
            .ok_or_else(|| {
                Error::invalid_argument("backend does not expose vocabulary labels")
            })?
            .to_vec();
        let mut index = HashMap::new();
        for (id, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), id as TokenId).is_some() {
                return Err(Error::invalid_argument(format!(
                    "duplicate vocabulary label '{label}'"
                )));
            }
        }
        Ok(Tokenizer { labels, index, eos: backend.eos_token() })
    }

    pub fn encode(&self, text: &str) -> Result<TokenSeq> {
        text.split_whitespace()
            .map(|word| {
                self.index.get(word).copied().ok_or_else(|| {
                    Error::parse(format!("word '{word}' is not in the vocabulary"))
                })
            })
            .collect()
    }

    pub fn decode(&self, tokens: &[TokenId]) -> Result<String> {
        let mut words = Vec::with_capacity(tokens.len());
        for &token in tokens {
            if self.eos == Some(token) {
                continue;
            }
            let label = self.labels.get(token as usize).ok_or_else(|| {
                Error::invalid_argument(format!(
                    "token {token} is outside the vocabulary of size {}",
                    self.labels.len()
                ))
            })?;
            words.push(label.as_str());
        }
        Ok(words.join(" "))
    }
}
