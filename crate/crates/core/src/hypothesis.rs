//! Hypotheses and beams.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::config::{fuse, DecodeConfig, ScoreComponents, ScorerKind};
use crate::score::LogScore;
use crate::scorers::ScorerState;
use crate::vocab::TokenId;

/// A token prefix with its accumulated scores and resumable scorer states.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Always starts with the shared sos/eos token.
    pub tokens: Vec<TokenId>,
    /// Weighted sum of `score_components`.
    pub score_total: LogScore,
    pub score_components: ScoreComponents,
    pub scorer_states: BTreeMap<ScorerKind, ScorerState>,
}

impl Hypothesis {
    /// The bare start hypothesis.
    pub fn initial(sos_eos_id: TokenId, states: BTreeMap<ScorerKind, ScorerState>) -> Self {
        let score_components = states.keys().map(|&k| (k, 0.0)).collect();
        Self {
            tokens: vec![sos_eos_id],
            score_total: 0.0,
            score_components,
            scorer_states: states,
        }
    }

    /// Number of emitted tokens, excluding the leading sos.
    pub fn length(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn last_token(&self) -> TokenId {
        *self.tokens.last().expect("hypothesis is never empty")
    }

    /// Emitted tokens without the leading sos and without a trailing eos.
    pub fn label_tokens(&self, sos_eos_id: TokenId) -> &[TokenId] {
        let body = &self.tokens[1..];
        match body.last() {
            Some(&t) if t == sos_eos_id => &body[..body.len() - 1],
            _ => body,
        }
    }

    pub fn component(&self, kind: ScorerKind) -> LogScore {
        self.score_components.get(&kind).copied().unwrap_or(0.0)
    }

    /// Recomputes the total from the components.
    pub fn recompute_total(&self, config: &DecodeConfig) -> LogScore {
        fuse(&self.score_components, config)
    }
}

/// Total order used for pruning: higher score first, then the
/// lexicographically smaller token sequence.
pub fn rank(a_score: LogScore, a_tokens: &[TokenId], b_score: LogScore, b_tokens: &[TokenId]) -> Ordering {
    let key = |x: LogScore| if x.is_nan() { f64::NEG_INFINITY } else { x };
    key(b_score)
        .partial_cmp(&key(a_score))
        .expect("NaN mapped away")
        .then_with(|| a_tokens.cmp(b_tokens))
}

/// Hypotheses of one output index, best first.
#[derive(Debug, Clone, Default)]
pub struct Beam {
    pub hypotheses: Vec<Hypothesis>,
    /// The output index `i` these hypotheses have length of.
    pub output_index: usize,
}

impl Beam {
    pub fn new(mut hypotheses: Vec<Hypothesis>, output_index: usize) -> Self {
        sort_hypotheses(&mut hypotheses);
        Self {
            hypotheses,
            output_index,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn prune(&mut self, k: usize) {
        sort_hypotheses(&mut self.hypotheses);
        self.hypotheses.truncate(k);
    }
}

pub fn sort_hypotheses(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| rank(a.score_total, &a.tokens, b.score_total, &b.tokens));
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hyp(tokens: Vec<TokenId>, score: f64) -> Hypothesis {
        Hypothesis {
            tokens,
            score_total: score,
            score_components: [(ScorerKind::Attention, score)].into_iter().collect(),
            scorer_states: BTreeMap::new(),
        }
    }

    #[test]
    fn ties_prefer_smaller_sequence() {
        let mut b = Beam::new(vec![hyp(vec![1, 3], -1.0), hyp(vec![1, 2], -1.0), hyp(vec![1, 4], -0.5)], 1);
        b.prune(2);
        assert_eq!(b.hypotheses[0].tokens, vec![1, 4]);
        assert_eq!(b.hypotheses[1].tokens, vec![1, 2]);
    }

    #[test]
    fn label_tokens_strip_markers() {
        let h = hyp(vec![1, 5, 6, 1], -1.0);
        assert_eq!(h.label_tokens(1), &[5, 6]);
        assert_eq!(h.length(), 3);
    }

    proptest! {
        #[test]
        fn sorting_is_deterministic_and_idempotent(
            items in proptest::collection::vec((proptest::collection::vec(0usize..4, 0..4), -5i32..0), 0..12)
        ) {
            let hyps: Vec<_> = items
                .iter()
                .map(|(t, s)| { let mut v = vec![1]; v.extend(t); hyp(v, *s as f64 * 0.5) })
                .collect();
            let mut a = hyps.clone();
            let mut b: Vec<_> = hyps.into_iter().rev().collect();
            sort_hypotheses(&mut a);
            sort_hypotheses(&mut b);
            let ka: Vec<_> = a.iter().map(|h| (h.tokens.clone(), h.score_total)).collect();
            let kb: Vec<_> = b.iter().map(|h| (h.tokens.clone(), h.score_total)).collect();
            prop_assert_eq!(&ka, &kb);
            sort_hypotheses(&mut a);
            let again: Vec<_> = a.iter().map(|h| (h.tokens.clone(), h.score_total)).collect();
            prop_assert_eq!(ka, again);
        }
    }
}
