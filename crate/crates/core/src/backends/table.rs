//! Explicit-table backend: a JSON-described model that maps context suffixes
//! to next-token distributions. The longest suffix with a row wins; contexts
//! matching no row fall back to the default row. Tables are the workhorse of
//! the test and benchmark tooling because their behavior is exact and easy
//! to reason about.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{check_context, LmBackend};
use crate::error::{Error, Result};
use crate::types::{Distribution, TokenId};

/// On-disk form of a table model.
///
/// ```json
/// {
///   "vocab": ["a", "b", "c"],
///   "default": [0.7, 0.2, 0.1],
///   "rows": [{"suffix": ["b", "a"], "probs": [0.1, 0.1, 0.8]}],
///   "eos": "c"
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableLmSpec {
    /// Token labels; index is the token id. Labels must be unique, non-empty
    /// and whitespace-free.
    pub vocab: Vec<String>,
    /// Distribution used when no row's suffix matches the context.
    pub default: Vec<f64>,
    /// Context-conditional rows, matched longest-suffix-first.
    #[serde(default)]
    pub rows: Vec<TableRowSpec>,
    /// Label of the end-of-sequence token, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRowSpec {
    pub suffix: Vec<String>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct TableRow {
    suffix: Vec<TokenId>,
    dist: Distribution,
}

/// A table model compiled from a [`TableLmSpec`].
#[derive(Debug, Clone)]
pub struct TableLm {
    labels: Vec<String>,
    default: Distribution,
    rows: Vec<TableRow>,
    by_suffix: HashMap<Vec<TokenId>, usize>,
    max_suffix_len: usize,
    eos: Option<TokenId>,
}

impl TableLm {
    /// Compiles a parsed spec, validating labels, row shapes, and
    /// probability sums. All violations are parse errors.
    pub fn from_spec(spec: &TableLmSpec) -> Result<Self> {
        if spec.vocab.is_empty() {
            return Err(Error::parse("table spec has an empty vocab"));
        }
        let mut label_ids: HashMap<&str, TokenId> = HashMap::new();
        for (i, label) in spec.vocab.iter().enumerate() {
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(Error::parse(format!(
                    "vocab label {i:?} must be non-empty and whitespace-free, got {label:?}"
                )));
            }
            if label_ids.insert(label, i as TokenId).is_some() {
                return Err(Error::parse(format!("duplicate vocab label {label:?}")));
            }
        }
        let default = parse_row_probs(&spec.default, spec.vocab.len(), "default row")?;

        let mut rows = Vec::with_capacity(spec.rows.len());
        let mut by_suffix = HashMap::new();
        let mut max_suffix_len = 0;
        for (i, row) in spec.rows.iter().enumerate() {
            let mut suffix = Vec::with_capacity(row.suffix.len());
            for label in &row.suffix {
                let id = label_ids.get(label.as_str()).ok_or_else(|| {
                    Error::parse(format!("row {i} suffix uses unknown token {label:?}"))
                })?;
                suffix.push(*id);
            }
            let dist = parse_row_probs(&row.probs, spec.vocab.len(), &format!("row {i}"))?;
            if by_suffix.insert(suffix.clone(), rows.len()).is_some() {
                return Err(Error::parse(format!(
                    "duplicate row suffix {:?}",
                    row.suffix
                )));
            }
            max_suffix_len = max_suffix_len.max(suffix.len());
            rows.push(TableRow { suffix, dist });
        }

        let eos = match &spec.eos {
            Some(label) => Some(*label_ids.get(label.as_str()).ok_or_else(|| {
                Error::parse(format!("eos label {label:?} is not in the vocab"))
            })?),
            None => None,
        };

        Ok(TableLm {
            labels: spec.vocab.clone(),
            default,
            rows,
            by_suffix,
            max_suffix_len,
            eos,
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let spec: TableLmSpec =
            serde_json::from_str(json).map_err(|e| Error::parse(format!("table spec: {e}")))?;
        Self::from_spec(&spec)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&json)
            .map_err(|e| Error::parse(format!("{}: {e}", path.display())))
    }

    /// A context-free table: every context yields the same distribution.
    /// Labels are auto-generated (`t0`, `t1`, ...), no end-of-sequence token.
    pub fn context_free(probs: &[f64]) -> Result<Self> {
        let spec = TableLmSpec {
            vocab: (0..probs.len()).map(|i| format!("t{i}")).collect(),
            default: probs.to_vec(),
            rows: Vec::new(),
            eos: None,
        };
        Self::from_spec(&spec)
    }

    /// Reconstructs the spec document this table serializes to.
    pub fn to_spec(&self) -> TableLmSpec {
        TableLmSpec {
            vocab: self.labels.clone(),
            default: self.default.probs(),
            rows: self
                .rows
                .iter()
                .map(|row| TableRowSpec {
                    suffix: row
                        .suffix
                        .iter()
                        .map(|&t| self.labels[t as usize].clone())
                        .collect(),
                    probs: row.dist.probs(),
                })
                .collect(),
            eos: self.eos.map(|t| self.labels[t as usize].clone()),
        }
    }
}

fn parse_row_probs(probs: &[f64], vocab_size: usize, what: &str) -> Result<Distribution> {
    if probs.len() != vocab_size {
        return Err(Error::parse(format!(
            "{what} has {} probabilities, expected vocab_size {vocab_size}",
            probs.len()
        )));
    }
    Distribution::from_probs(probs).map_err(|e| Error::parse(format!("{what}: {e}")))
}

impl LmBackend for TableLm {
    fn vocab_size(&self) -> usize {
        self.labels.len()
    }

    fn vocab_labels(&self) -> Option<&[String]> {
        Some(&self.labels)
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.eos
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Distribution> {
        check_context(self.labels.len(), context)?;
        let longest = self.max_suffix_len.min(context.len());
        for len in (1..=longest).rev() {
            if let Some(&i) = self.by_suffix.get(&context[context.len() - len..]) {
                return Ok(self.rows[i].dist.clone());
            }
        }
        // The empty suffix is the default row.
        if let Some(&i) = self.by_suffix.get(&[] as &[TokenId]) {
            return Ok(self.rows[i].dist.clone());
        }
        Ok(self.default.clone())
    }
}
