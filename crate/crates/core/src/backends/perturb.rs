//! Perturbation wrapper: a backend that behaves exactly like its base model
//! except at contexts matching configured suffixes, where one token's
//! probability is boosted and the rest of the mass is rescaled
//! proportionally. This is how synthetic "hallucinating" targets are built
//! from a clean reference: the divergence locations are known exactly.

use serde::{Deserialize, Serialize};

use crate::backends::LmBackend;
use crate::error::{Error, Result};
use crate::types::{Distribution, TokenId, TokenSeq};

/// One localized edit: at any context ending with `match_context_suffix`
/// (an empty suffix matches every context), force `boosted_token` to
/// probability `boosted_prob` and rescale the remaining tokens to share the
/// leftover mass in their original proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEdit {
    pub match_context_suffix: TokenSeq,
    pub boosted_token: TokenId,
    /// Must lie strictly inside (0, 1).
    pub boosted_prob: f64,
}

/// A base backend plus a set of non-conflicting edits.
#[derive(Debug, Clone)]
pub struct PerturbedLm<B> {
    base: B,
    edits: Vec<PerturbationEdit>,
}

/// Wraps `base` with `edits`, validating each edit and rejecting pairs that
/// could match the same context. Two suffixes can both match a context only
/// when one is a suffix of the other, so that is the conflict condition.
pub fn perturb_backend<B: LmBackend>(base: B, edits: Vec<PerturbationEdit>) -> Result<PerturbedLm<B>> {
    let vocab_size = base.vocab_size();
    if vocab_size < 2 {
        return Err(Error::invalid_argument(
            "perturbation requires a vocabulary of at least 2 tokens",
        ));
    }
    for (i, edit) in edits.iter().enumerate() {
        if edit.boosted_token as usize >= vocab_size {
            return Err(Error::invalid_argument(format!(
                "edit {i} boosts token {} outside vocab_size {vocab_size}",
                edit.boosted_token
            )));
        }
        if !(edit.boosted_prob > 0.0 && edit.boosted_prob < 1.0) {
            return Err(Error::invalid_argument(format!(
                "edit {i} has boosted_prob {}, expected a value in (0, 1)",
                edit.boosted_prob
            )));
        }
        for (t, &token) in edit.match_context_suffix.iter().enumerate() {
            if token as usize >= vocab_size {
                return Err(Error::invalid_argument(format!(
                    "edit {i} suffix token {token} at position {t} is outside vocab_size {vocab_size}"
                )));
            }
        }
    }
    for i in 0..edits.len() {
        for j in (i + 1)..edits.len() {
            let (a, b) = (&edits[i].match_context_suffix, &edits[j].match_context_suffix);
            if a.ends_with(b) || b.ends_with(a) {
                return Err(Error::invalid_argument(format!(
                    "edits {i} and {j} conflict: suffixes {a:?} and {b:?} can match the same context"
                )));
            }
        }
    }
    Ok(PerturbedLm { base, edits })
}

impl<B: LmBackend> PerturbedLm<B> {
    pub fn base(&self) -> &B {
        &self.base
    }

    pub fn edits(&self) -> &[PerturbationEdit] {
        &self.edits
    }
}

/// Boost arithmetic shared with the synthetic suite's materialized tables.
pub(crate) fn apply_boost(base: &Distribution, edit: &PerturbationEdit) -> Result<Distribution> {
    let probs = base.probs();
    let b = edit.boosted_token as usize;
    let residual = 1.0 - edit.boosted_prob;
    let rest_mass = 1.0 - probs[b];
    let mut boosted = vec![0.0; probs.len()];
    boosted[b] = edit.boosted_prob;
    if rest_mass > 1e-300 {
        let scale = residual / rest_mass;
        for (i, &p) in probs.iter().enumerate() {
            if i != b {
                boosted[i] = p * scale;
            }
        }
    } else {
        // The base put everything on the boosted token; spread the residual
        // uniformly since there are no proportions to preserve.
        let share = residual / (probs.len() - 1) as f64;
        for (i, slot) in boosted.iter_mut().enumerate() {
            if i != b {
                *slot = share;
            }
        }
    }
    Distribution::from_probs(&boosted)
}

impl<B: LmBackend> LmBackend for PerturbedLm<B> {
    fn vocab_size(&self) -> usize {
        self.base.vocab_size()
    }

    fn vocab_labels(&self) -> Option<&[String]> {
        self.base.vocab_labels()
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.base.eos_token()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Distribution> {
        let dist = self.base.next_distribution(context)?;
        // Conflict checking at construction guarantees at most one match.
        match self.edits.iter().find(|e| context.ends_with(&e.match_context_suffix)) {
            Some(edit) => apply_boost(&dist, edit),
            None => Ok(dist),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::TableLm;

    fn base() -> TableLm {
        TableLm::context_free(&[0.1, 0.7, 0.2]).unwrap()
    }

    fn edit(suffix: TokenSeq, token: TokenId, prob: f64) -> PerturbationEdit {
        PerturbationEdit { match_context_suffix: suffix, boosted_token: token, boosted_prob: prob }
    }

    #[test]
    fn boost_rescales_remaining_mass_proportionally() {
        // Boosting token 0 of (0.1, 0.7, 0.2) to 0.9 leaves 0.1 split in the
        // old 0.7 : 0.2 proportions: (0.9, 0.0777..., 0.0222...).
        let lm = perturb_backend(base(), vec![edit(vec![], 0, 0.9)]).unwrap();
        let d = lm.next_distribution(&[1, 2]).unwrap();
        assert!((d.prob(0) - 0.9).abs() < 1e-12);
        assert!((d.prob(1) - 0.7 / 0.9 * 0.1).abs() < 1e-12);
        assert!((d.prob(2) - 0.2 / 0.9 * 0.1).abs() < 1e-12);
        d.validate().unwrap();
        assert_eq!(d.argmax(), 0);
    }

    #[test]
    fn edit_applies_only_at_matching_contexts() {
        let lm = perturb_backend(base(), vec![edit(vec![2, 1], 0, 0.9)]).unwrap();
        // Exhaustive sweep over contexts up to length 3 on a 3-token vocab.
        let mut contexts: Vec<TokenSeq> = vec![vec![]];
        for len in 1..=3usize {
            let mut level = Vec::new();
            for prev in contexts.iter().filter(|c| c.len() == len - 1) {
                for t in 0..3 {
                    let mut c = prev.clone();
                    c.push(t);
                    level.push(c);
                }
            }
            contexts.extend(level);
        }
        for ctx in &contexts {
            let perturbed = lm.next_distribution(ctx).unwrap();
            let original = base().next_distribution(ctx).unwrap();
            if ctx.ends_with(&[2, 1]) {
                assert!((perturbed.prob(0) - 0.9).abs() < 1e-12, "context {ctx:?}");
            } else {
                for t in 0..3 {
                    assert!(
                        (perturbed.prob(t) - original.prob(t)).abs() < 1e-12,
                        "context {ctx:?} token {t}"
                    );
                }
            }
        }
    }

    #[test]
    fn empty_edit_list_is_identity() {
        let lm = perturb_backend(base(), vec![]).unwrap();
        let d = lm.next_distribution(&[0, 1, 2]).unwrap();
        for t in 0..3 {
            assert!((d.prob(t) - base().next_distribution(&[]).unwrap().prob(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn conflicting_edits_are_rejected() {
        // Equal suffixes conflict.
        let err = perturb_backend(base(), vec![edit(vec![1], 0, 0.9), edit(vec![1], 2, 0.8)]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        // Nested suffixes conflict: [2, 1] matches a subset of [1]'s contexts.
        let err = perturb_backend(base(), vec![edit(vec![1], 0, 0.9), edit(vec![2, 1], 2, 0.8)]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        // The empty suffix conflicts with everything.
        let err = perturb_backend(base(), vec![edit(vec![], 0, 0.9), edit(vec![2], 2, 0.8)]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        // Disjoint suffixes coexist.
        assert!(perturb_backend(base(), vec![edit(vec![1], 0, 0.9), edit(vec![2], 2, 0.8)]).is_ok());
    }

    #[test]
    fn rejects_invalid_edit_parameters() {
        assert!(perturb_backend(base(), vec![edit(vec![], 5, 0.9)]).is_err());
        assert!(perturb_backend(base(), vec![edit(vec![], 0, 0.0)]).is_err());
        assert!(perturb_backend(base(), vec![edit(vec![], 0, 1.0)]).is_err());
        assert!(perturb_backend(base(), vec![edit(vec![9], 0, 0.9)]).is_err());
    }

    #[test]
    fn degenerate_base_spreads_residual_uniformly() {
        let spike = TableLm::context_free(&[0.0, 1.0, 0.0]).unwrap();
        let lm = perturb_backend(spike, vec![edit(vec![], 1, 0.4)]).unwrap();
        let d = lm.next_distribution(&[]).unwrap();
        assert!((d.prob(1) - 0.4).abs() < 1e-12);
        assert!((d.prob(0) - 0.3).abs() < 1e-12);
        assert!((d.prob(2) - 0.3).abs() < 1e-12);
    }
}
