//! Language model backends.
//!
//! Everything downstream (monitoring, revision, the engine) sees models
//! through the [`LmBackend`] trait: a deterministic next-token distribution
//! over a fixed vocabulary. The same trait serves both roles of a run, the
//! target model being monitored and the trusted reference model, so any
//! backend can play either part.
//!
//! Implementations here are synthetic (explicit tables, n-gram models,
//! perturbation wrappers) plus a client for real models served over a
//! line-delimited JSON protocol.

mod ngram;
mod perturb;
mod remote;
mod table;

pub use ngram::NgramLm;
pub use perturb::{perturb_backend, PerturbationEdit, PerturbedLm};
pub use remote::{serve_backend, RemoteLm, DEFAULT_REMOTE_TIMEOUT};
pub use table::{TableLm, TableLmSpec, TableRowSpec};

use crate::error::{Error, Result};
use crate::types::{Distribution, TokenId};

/// A deterministic next-token model over a fixed vocabulary.
///
/// Backends are read-only after construction: the same context always yields
/// the same distribution, and concurrent queries from multiple threads are
/// safe.
pub trait LmBackend: Send + Sync {
    /// Number of tokens in the vocabulary (>= 1).
    fn vocab_size(&self) -> usize;

    /// Human-readable token labels, if the backend knows them. Required for
    /// string corpora; id-level callers never need labels.
    fn vocab_labels(&self) -> Option<&[String]> {
        None
    }

    /// The end-of-sequence token, if the model has one.
    fn eos_token(&self) -> Option<TokenId> {
        None
    }

    /// The model's distribution over the next token given `context`.
    ///
    /// Every context token must be `< vocab_size`; violations are an
    /// invalid-argument error. Remote transport failures surface as
    /// backend-unavailable errors.
    fn next_distribution(&self, context: &[TokenId]) -> Result<Distribution>;
}

/// Shared precondition check: every context token must be in range.
pub(crate) fn check_context(vocab_size: usize, context: &[TokenId]) -> Result<()> {
    for (i, &t) in context.iter().enumerate() {
        if t as usize >= vocab_size {
            return Err(Error::invalid_argument(format!(
                "context token {t} at position {i} is out of range for vocab_size {vocab_size}"
            )));
        }
    }
    Ok(())
}

impl<B: LmBackend + ?Sized> LmBackend for &B {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn vocab_labels(&self) -> Option<&[String]> {
        (**self).vocab_labels()
    }

    fn eos_token(&self) -> Option<TokenId> {
        (**self).eos_token()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Distribution> {
        (**self).next_distribution(context)
    }
}

impl<B: LmBackend + ?Sized> LmBackend for std::sync::Arc<B> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn vocab_labels(&self) -> Option<&[String]> {
        (**self).vocab_labels()
    }

    fn eos_token(&self) -> Option<TokenId> {
        (**self).eos_token()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Distribution> {
        (**self).next_distribution(context)
    }
}

impl<B: LmBackend + ?Sized> LmBackend for Box<B> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn vocab_labels(&self) -> Option<&[String]> {
        (**self).vocab_labels()
    }

    fn eos_token(&self) -> Option<TokenId> {
        (**self).eos_token()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Distribution> {
        (**self).next_distribution(context)
    }
}
