//! Table-scorer scenarios: scripted distributions decoded without a model.

use std::path::Path;
use std::sync::Arc;

use blocksync::layout::EncodedBlock;
use blocksync::scorers::{TableScorer, TableScript};
use blocksync::trace::TraceEvent;
use blocksync::{batch_beam_search, blockwise_synchronous_beam_search, DecodeConfig, ScorerSet, SearchResult};

use crate::error::{in_file, read_file, Result};
use crate::report::DecodeMode;

/// The "he clasp ed his hands on the desk and said" walk-through.
pub const FIG2: &str = include_str!("../../../scenarios/fig2.tbl");
/// Repetition-only unreliable step, for the eos-only ablation.
pub const REPETITION_ABLATION: &str = include_str!("../../../scenarios/repetition_ablation.tbl");
/// A judged repetition that would fire again in the next block.
pub const OMEGA_R: &str = include_str!("../../../scenarios/omega_r.tbl");

pub fn builtin(name: &str) -> Option<&'static str> {
    match name.trim_end_matches(".tbl") {
        "fig2" => Some(FIG2),
        "repetition_ablation" => Some(REPETITION_ABLATION),
        "omega_r" => Some(OMEGA_R),
        _ => None,
    }
}

/// Reads a script from `path`, falling back to a built-in scenario of the
/// same file name when the file does not exist.
pub fn load_script(path: &Path) -> Result<TableScript> {
    if !path.exists() {
        if let Some(text) = path.file_name().and_then(|n| n.to_str()).and_then(builtin) {
            return Ok(TableScript::parse(text)?);
        }
    }
    let text = read_file(path)?;
    TableScript::parse(&text).map_err(|e| in_file(path, e))
}

/// Zero-content blocks, as many as the script declares (one if it does
/// not say).
pub fn scenario_blocks(script: &TableScript) -> Vec<EncodedBlock> {
    let n = script.blocks().unwrap_or(1);
    let per = script.frames_per_block();
    (0..n)
        .map(|i| EncodedBlock::placeholder(i + 1, i * per, per, i + 1 == n))
        .collect()
}

pub fn run_scenario(script: &TableScript, config: &DecodeConfig, mode: DecodeMode) -> Result<SearchResult> {
    let vocab = script.vocab().clone();
    let set = ScorerSet::new(Arc::new(TableScorer::new(script.clone())))?;
    let blocks = scenario_blocks(script);
    Ok(match mode {
        DecodeMode::Streaming => blockwise_synchronous_beam_search(blocks, &set, config, &vocab)?,
        DecodeMode::Batch => batch_beam_search(&blocks, &set, config, &vocab)?,
    })
}

/// One line per index boundary, then the result.
pub fn describe(script: &TableScript, result: &SearchResult) -> String {
    let vocab = script.vocab();
    let mut out = String::new();
    for e in &result.trace.events {
        if let TraceEvent::IndexBoundary { block, index, reason } = e {
            out.push_str(&format!("I_{block} = {index} ({})\n", format!("{reason:?}").to_lowercase()));
        }
    }
    let sos = vocab.sos_eos_id();
    out.push_str(&format!(
        "best: {} ({:.4}{})\n",
        vocab.render(result.best.label_tokens(sos)),
        result.best.score_total,
        if result.forced { ", forced" } else { "" }
    ));
    out.push_str(&format!("re-decoded steps: {}\n", result.trace.redecoded_steps()));
    out
}
