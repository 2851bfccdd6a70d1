//! Per-utterance result records, one JSON object per line.

use std::collections::BTreeMap;

use blocksync::trace::{score_serde, Score};
use blocksync::{SearchResult, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::{edit_distance, EditCounts, ErrorSummary};

/// Bumped whenever a field changes meaning or disappears.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Batch,
    Streaming,
}

impl DecodeMode {
    pub fn name(self) -> &'static str {
        match self {
            DecodeMode::Batch => "batch",
            DecodeMode::Streaming => "streaming",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySummary {
    pub blocks: usize,
    /// `I_0, I_1, ...` as decided during streaming.
    pub index_boundaries: Vec<usize>,
    pub redecoded_steps: usize,
}

/// Schema version 1.
///
/// | field | meaning |
/// |---|---|
/// | `schema_version` | always 1 |
/// | `id` | utterance id from the manifest |
/// | `mode` | `batch` or `streaming` |
/// | `reference` | reference tokens, absent when unknown |
/// | `hypothesis` | best hypothesis without sos/eos |
/// | `score` | fused log score; `"-inf"` style strings for non-finite values |
/// | `scores` | accumulated log score per scorer |
/// | `forced` | no hypothesis reached eos |
/// | `block_times` | wall seconds spent on each block (encode + decode) |
/// | `finalize_time` | wall seconds spent after the last block |
/// | `response_time` | seconds from last-frame availability to completion |
/// | `cpu_seconds`, `audio_seconds`, `rtf` | processing CPU time, input length, their ratio |
/// | `boundaries` | block count, index boundaries, re-decoded steps |
/// | `errors` | edit counts against `reference`, absent without one |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceResult {
    pub schema_version: u32,
    pub id: String,
    pub mode: DecodeMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<String>>,
    pub hypothesis: Vec<String>,
    #[serde(with = "score_serde")]
    pub score: f64,
    pub scores: BTreeMap<String, Score>,
    pub forced: bool,
    pub block_times: Vec<f64>,
    pub finalize_time: f64,
    pub response_time: f64,
    pub cpu_seconds: f64,
    pub audio_seconds: f64,
    pub rtf: f64,
    pub boundaries: BoundarySummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<EditCounts>,
}

impl UtteranceResult {
    /// Record for `search` with all timing fields zero.
    pub fn from_search(
        id: &str,
        mode: DecodeMode,
        search: &SearchResult,
        vocab: &Vocabulary,
        reference: Option<&[String]>,
    ) -> Self {
        let hypothesis: Vec<String> = search
            .best
            .label_tokens(vocab.sos_eos_id())
            .iter()
            .map(|&t| vocab.token(t).unwrap_or("<unk>").to_string())
            .collect();
        let errors = reference.map(|r| edit_distance(r, &hypothesis));
        Self {
            schema_version: SCHEMA_VERSION,
            id: id.to_string(),
            mode,
            reference: reference.map(<[String]>::to_vec),
            hypothesis,
            score: search.best.score_total,
            scores: search
                .best
                .score_components
                .iter()
                .map(|(k, &v)| (k.name().to_string(), Score(v)))
                .collect(),
            forced: search.forced,
            block_times: Vec::new(),
            finalize_time: 0.0,
            response_time: 0.0,
            cpu_seconds: 0.0,
            audio_seconds: 0.0,
            rtf: 0.0,
            boundaries: BoundarySummary {
                blocks: 0,
                index_boundaries: search.trace.boundaries.clone(),
                redecoded_steps: search.trace.redecoded_steps(),
            },
            errors,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(line)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::SchemaVersion {
                found: r.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(r)
    }
}

pub fn parse_records(text: &str) -> Result<Vec<UtteranceResult>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(UtteranceResult::from_line)
        .collect()
}

/// Error rate and timing averages over a set of records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub errors: ErrorSummary,
    pub utterances: usize,
    pub mean_response_time: f64,
    pub max_response_time: f64,
    /// Total CPU time over total audio time.
    pub rtf: f64,
}

impl Summary {
    pub fn of(records: &[UtteranceResult]) -> Self {
        let errors: ErrorSummary = records.iter().filter_map(|r| r.errors.as_ref()).collect();
        let n = records.len();
        let cpu: f64 = records.iter().map(|r| r.cpu_seconds).sum();
        let audio: f64 = records.iter().map(|r| r.audio_seconds).sum();
        let resp: Vec<f64> = records.iter().map(|r| r.response_time).collect();
        Self {
            errors,
            utterances: n,
            mean_response_time: if n == 0 { 0.0 } else { resp.iter().sum::<f64>() / n as f64 },
            max_response_time: resp.iter().copied().fold(0.0, f64::max),
            rtf: if audio > 0.0 { cpu / audio } else { 0.0 },
        }
    }

    /// Human-readable table, one row per record and a total row.
    pub fn table(records: &[UtteranceResult]) -> String {
        let mut out = format!(
            "{:<16} {:<9} {:>6} {:>7} {:>8} {:>7}\n",
            "id", "mode", "err%", "rtf", "resp(s)", "blocks"
        );
        for r in records {
            let err = r
                .errors
                .map(|e| format!("{:.1}", 100.0 * e.rate()))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<16} {:<9} {:>6} {:>7.3} {:>8.3} {:>7}\n",
                r.id,
                r.mode.name(),
                err,
                r.rtf,
                r.response_time,
                r.boundaries.blocks
            ));
        }
        let s = Self::of(records);
        let err = if s.errors.utterances > 0 {
            format!("{:.1}", 100.0 * s.errors.rate())
        } else {
            "-".into()
        };
        out.push_str(&format!(
            "{:<16} {:<9} {:>6} {:>7.3} {:>8.3} {:>7}\n",
            format!("total ({})", s.utterances),
            "",
            err,
            s.rtf,
            s.mean_response_time,
            ""
        ));
        out
    }
}
