//! Decoding trace records, written as one JSON object per line.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bbd::ReliabilityReport;
use crate::config::ScorerKind;
use crate::hypothesis::Hypothesis;
use crate::score::LogScore;
use crate::vocab::TokenId;

/// Serde helpers writing non-finite scores as the strings `"-inf"`,
/// `"inf"` and `"nan"` so that every record stays valid JSON.
pub mod score_serde {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct ScoreVisitor;

    impl Visitor<'_> for ScoreVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(ScoreVisitor)
    }
}

/// A score that serializes like [`score_serde`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score(#[serde(with = "score_serde")] pub LogScore);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHypothesis {
    pub tokens: Vec<TokenId>,
    pub score: Score,
    pub components: BTreeMap<ScorerKind, Score>,
}

impl From<&Hypothesis> for TraceHypothesis {
    fn from(h: &Hypothesis) -> Self {
        Self {
            tokens: h.tokens.clone(),
            score: Score(h.score_total),
            components: h.score_components.iter().map(|(&k, &v)| (k, Score(v))).collect(),
        }
    }
}

/// A reliability report with the hypothesis it concerns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub tokens: Vec<TokenId>,
    pub report: ReliabilityReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Blocks `1..b` with `b < B`, boundary detection active.
    Streaming,
    /// All blocks available.
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryReason {
    /// Boundary detection fired.
    Detected,
    /// The output length cap was reached first.
    LengthCap,
    /// Every hypothesis had ended.
    BeamExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    /// The best completed hypothesis beat every active one.
    EndingCriterion,
    LengthCap,
    BeamExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    /// A block arrived. `resume_from` is the beam decoding restarts from.
    Block {
        block: usize,
        frames: usize,
        is_last: bool,
        resume_from: usize,
    },
    /// Pruned beam `Ω_step` computed with `block` blocks.
    Step {
        step: usize,
        block: usize,
        phase: Phase,
        beam: Vec<TraceHypothesis>,
    },
    /// Boundary detection on the beam of the preceding step record.
    Check {
        step: usize,
        block: usize,
        boundary: bool,
        entries: Vec<CheckEntry>,
    },
    /// `I_block = index`.
    IndexBoundary {
        block: usize,
        index: usize,
        reason: BoundaryReason,
    },
    Completed {
        step: usize,
        block: usize,
        hypothesis: TraceHypothesis,
    },
    End {
        step: usize,
        reason: EndReason,
    },
}

/// Everything recorded during one decode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchTrace {
    pub events: Vec<TraceEvent>,
    /// `I_0, I_1, ..., I_{B-1}`.
    pub boundaries: Vec<usize>,
    /// How often each output index was searched; entry 0 is unused.
    pub decode_counts: Vec<usize>,
}

impl SearchTrace {
    /// Steps searched more than once, counting each repeat.
    pub fn redecoded_steps(&self) -> usize {
        self.decode_counts.iter().map(|&c| c.saturating_sub(1)).sum()
    }

    pub(crate) fn count_step(&mut self, step: usize) {
        if self.decode_counts.len() <= step {
            self.decode_counts.resize(step + 1, 0);
        }
        self.decode_counts[step] += 1;
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events always serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses the event lines written by [`to_jsonl`](Self::to_jsonl).
    pub fn events_from_jsonl(text: &str) -> serde_json::Result<Vec<TraceEvent>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }

    /// Check records made with `block` blocks available.
    pub fn checks(&self, block: usize) -> impl Iterator<Item = (usize, bool, &[CheckEntry])> {
        self.events.iter().filter_map(move |e| match e {
            TraceEvent::Check {
                step,
                block: b,
                boundary,
                entries,
            } if *b == block => Some((*step, *boundary, entries.as_slice())),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_scores_round_trip() {
        let e = TraceEvent::Check {
            step: 2,
            block: 1,
            boundary: true,
            entries: vec![CheckEntry {
                tokens: vec![1, 2],
                report: ReliabilityReport {
                    hypothesis: 0,
                    r: f64::NEG_INFINITY,
                    s: f64::INFINITY,
                    j_star: None,
                    reliable: true,
                },
            }],
        };
        let trace = SearchTrace {
            events: vec![e.clone()],
            ..SearchTrace::default()
        };
        let text = trace.to_jsonl();
        assert!(text.contains("\"-inf\""), "{text}");
        assert_eq!(SearchTrace::events_from_jsonl(&text).unwrap(), vec![e]);
    }
}
