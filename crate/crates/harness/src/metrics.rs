//! Token error counting.

use serde::{Deserialize, Serialize};

/// Levenshtein alignment counts between a reference and a hypothesis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
    pub hyp_len: usize,
}

impl EditCounts {
    /// `distance / |ref|`. With an empty reference the rate is taken against
    /// the hypothesis length instead, see [`EditCounts::empty_reference`].
    pub fn rate(&self) -> f64 {
        if self.ref_len > 0 {
            self.distance as f64 / self.ref_len as f64
        } else if self.hyp_len > 0 {
            self.distance as f64 / self.hyp_len as f64
        } else {
            0.0
        }
    }

    pub fn empty_reference(&self) -> bool {
        self.ref_len == 0 && self.hyp_len > 0
    }
}

/// Unit-cost edit distance. Among minimal alignments, substitutions are
/// preferred over insertion/deletion pairs, then deletions over insertions.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    // (distance, subs, ins, dels) per cell, one row at a time.
    let mut prev: Vec<(usize, usize, usize, usize)> = (0..=m).map(|j| (j, 0, j, 0)).collect();
    let mut cur = vec![(0, 0, 0, 0); m + 1];
    for i in 1..=n {
        cur[0] = (i, 0, 0, i);
        for j in 1..=m {
            let diag = prev[j - 1];
            let same = reference[i - 1] == hypothesis[j - 1];
            let sub = if same {
                diag
            } else {
                (diag.0 + 1, diag.1 + 1, diag.2, diag.3)
            };
            let del = (prev[j].0 + 1, prev[j].1, prev[j].2, prev[j].3 + 1);
            let ins = (cur[j - 1].0 + 1, cur[j - 1].1, cur[j - 1].2 + 1, cur[j - 1].3);
            let mut best = sub;
            if del.0 < best.0 {
                best = del;
            }
            if ins.0 < best.0 {
                best = ins;
            }
            cur[j] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (distance, substitutions, insertions, deletions) = prev[m];
    EditCounts {
        distance,
        substitutions,
        insertions,
        deletions,
        ref_len: n,
        hyp_len: m,
    }
}

/// Micro-averaged totals over a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub utterances: usize,
    pub totals: EditCounts,
    pub empty_references: usize,
}

impl ErrorSummary {
    pub fn add(&mut self, c: &EditCounts) {
        self.utterances += 1;
        let t = &mut self.totals;
        t.distance += c.distance;
        t.substitutions += c.substitutions;
        t.insertions += c.insertions;
        t.deletions += c.deletions;
        t.ref_len += c.ref_len;
        t.hyp_len += c.hyp_len;
        if c.empty_reference() {
            self.empty_references += 1;
        }
    }

    /// Summed distances over summed reference lengths.
    pub fn rate(&self) -> f64 {
        self.totals.rate()
    }
}

impl<'a> FromIterator<&'a EditCounts> for ErrorSummary {
    fn from_iter<I: IntoIterator<Item = &'a EditCounts>>(iter: I) -> Self {
        let mut s = Self::default();
        for c in iter {
            s.add(c);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_is_zero() {
        let c = edit_distance(&words("a b c"), &words("a b c"));
        assert_eq!(c.distance, 0);
        assert_eq!(c.rate(), 0.0);
    }

    #[test]
    fn one_substitution() {
        let c = edit_distance(&words("a b c"), &words("a b d"));
        assert_eq!((c.distance, c.substitutions, c.insertions, c.deletions), (1, 1, 0, 0));
    }

    #[test]
    fn insertions_and_deletions() {
        let c = edit_distance(&words("a b c"), &words("a c"));
        assert_eq!((c.distance, c.deletions), (1, 1));
        let c = edit_distance(&words("a c"), &words("x a c y"));
        assert_eq!((c.distance, c.insertions), (2, 2));
    }

    #[test]
    fn empty_reference_is_flagged() {
        let c = edit_distance::<&str>(&[], &words("a b"));
        assert!(c.empty_reference());
        assert_eq!(c.insertions, 2);
        assert_eq!(c.rate(), 1.0);
        let c = edit_distance::<&str>(&[], &[]);
        assert!(!c.empty_reference());
        assert_eq!(c.rate(), 0.0);
    }

    #[test]
    fn summary_is_micro_averaged() {
        let a = edit_distance(&words("a b c d"), &words("a b c d"));
        let b = edit_distance(&words("a"), &words("b"));
        let s: ErrorSummary = [a, b].iter().collect();
        assert_eq!(s.rate(), 1.0 / 5.0);
    }
}
