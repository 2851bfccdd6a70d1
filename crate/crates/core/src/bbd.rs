//! Block boundary detection.
//!
//! While only part of the utterance is encoded, a hypothesis that would
//! rather end (emit eos) or repeat an earlier token is a sign that the
//! decoder has run out of acoustic evidence. For a parent prefix `g` with
//! accumulated score `α(g)` and next-token log distribution `p`, the
//! repetition score is
//!
//! ```text
//! r(g) = max_j p(g_j) + α(g)      over positions j of g, g_0 = sos = eos
//! ```
//!
//! and a child `g·c` is reliable when `s = α(g·c) − r(g)` is positive.
//! Pairs `(g, j)` that already triggered a boundary are excluded from the
//! max from then on.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::config::DecodeConfig;
use crate::score::{LogScore, LOG_ZERO};
use crate::vocab::TokenId;

/// Pairs `(prefix, j)` whose repetition of `prefix[j]` has been judged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvaluatedSet {
    pairs: HashSet<(Vec<TokenId>, usize)>,
}

impl EvaluatedSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if the pair was already present.
    pub fn insert(&mut self, prefix: &[TokenId], j: usize) -> bool {
        self.pairs.insert((prefix.to_vec(), j))
    }

    pub fn contains(&self, prefix: &[TokenId], j: usize) -> bool {
        // Avoids allocating a key for the lookup when the set is empty.
        !self.pairs.is_empty() && self.pairs.contains(&(prefix.to_vec(), j))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Pairs in a stable order.
    pub fn sorted(&self) -> Vec<(Vec<TokenId>, usize)> {
        let mut v: Vec<_> = self.pairs.iter().cloned().collect();
        v.sort();
        v
    }
}

/// BBD verdict for one hypothesis of the current beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    /// Position of the hypothesis in the beam.
    pub hypothesis: usize,
    #[serde(with = "crate::trace::score_serde")]
    pub r: LogScore,
    #[serde(with = "crate::trace::score_serde")]
    pub s: LogScore,
    /// Position in the parent prefix attaining `r`; `None` when `r = −∞`.
    pub j_star: Option<usize>,
    pub reliable: bool,
}

/// `(r, j*)` for a parent prefix. With the repetition criterion off, only
/// eos (position 0) is a candidate. Excluded pairs are skipped; ties go
/// to the smaller position.
///
/// ```
/// use blocksync::bbd::{repetition_score, EvaluatedSet};
/// // vocabulary: 0 blank, 1 sos/eos, 2 a, 3 b
/// let dist = [f64::NEG_INFINITY, -2.0, -1.0, -0.5];
/// let (r, j) = repetition_score(&[1, 2, 3], &dist, -3.0, &EvaluatedSet::new(), true);
/// assert_eq!((r, j), (-3.5, Some(2)));
/// ```
pub fn repetition_score(
    prefix: &[TokenId],
    dist: &[LogScore],
    alpha_prev: LogScore,
    excluded: &EvaluatedSet,
    repetition_criterion: bool,
) -> (LogScore, Option<usize>) {
    let positions = if repetition_criterion { prefix.len() } else { prefix.len().min(1) };
    let mut best = (LOG_ZERO, None);
    for (j, &tok) in prefix.iter().enumerate().take(positions) {
        if excluded.contains(prefix, j) {
            continue;
        }
        let score = dist[tok] + alpha_prev;
        if score > best.0 {
            best = (score, Some(j));
        }
    }
    best
}

/// `s = α_new − r`; `+∞` when `r = −∞`.
pub fn reliability(alpha_new: LogScore, r: LogScore) -> LogScore {
    if r == LOG_ZERO {
        f64::INFINITY
    } else {
        alpha_new - r
    }
}

/// What BBD needs to know about one hypothesis of the pruned beam.
#[derive(Debug, Clone, Copy)]
pub struct BbdInput<'a> {
    /// The hypothesis, `parent + [token]`.
    pub tokens: &'a [TokenId],
    pub alpha: LogScore,
    /// Score of the parent prefix.
    pub alpha_prev: LogScore,
    /// Next-token distribution the parent was expanded with.
    pub parent_dist: &'a [LogScore],
}

/// Outcome of a detection check on one beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryDecision {
    pub boundary: bool,
    pub reports: Vec<ReliabilityReport>,
}

/// Scores every hypothesis of the beam; the boundary fires if any is
/// unreliable. For each unreliable hypothesis the triggering pair
/// `(parent, j*)` is stored, together with `(parent, j)` for every
/// position that the hypothesis itself repeats.
pub fn detect_boundary(beam: &[BbdInput<'_>], config: &DecodeConfig, evaluated: &mut EvaluatedSet) -> BoundaryDecision {
    let reports: Vec<ReliabilityReport> = beam
        .iter()
        .enumerate()
        .map(|(n, h)| {
            let parent = &h.tokens[..h.tokens.len() - 1];
            let (r, j_star) = repetition_score(parent, h.parent_dist, h.alpha_prev, evaluated, config.repetition_criterion);
            let s = reliability(h.alpha, r);
            ReliabilityReport {
                hypothesis: n,
                r,
                s,
                j_star,
                reliable: !config.is_unreliable(s),
            }
        })
        .collect();
    // Insert only after every report is computed so that the verdicts do
    // not depend on beam order.
    for (h, rep) in beam.iter().zip(&reports) {
        if rep.reliable {
            continue;
        }
        let parent = &h.tokens[..h.tokens.len() - 1];
        let last = h.tokens[h.tokens.len() - 1];
        if let Some(j) = rep.j_star {
            evaluated.insert(parent, j);
        }
        for (j, &t) in parent.iter().enumerate() {
            if t == last {
                evaluated.insert(parent, j);
            }
        }
    }
    BoundaryDecision {
        boundary: reports.iter().any(|r| !r.reliable),
        reports,
    }
}
