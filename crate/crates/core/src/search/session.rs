use crate::bbd::{detect_boundary, BbdInput, EvaluatedSet};
use crate::config::DecodeConfig;
use crate::error::{Error, Result};
use crate::hypothesis::{rank, sort_hypotheses, Beam, Hypothesis};
use crate::layout::EncodedBlock;
use crate::scorers::{BlockStore, ScorerSet};
use crate::trace::{BoundaryReason, CheckEntry, EndReason, Phase, SearchTrace, TraceEvent, TraceHypothesis};
use crate::vocab::Vocabulary;

use super::step::{search_step, SearchSetup, StepOutcome};

/// Outcome of a complete decode.
#[derive(Debug, Clone)]
pub struct SearchResult {
    /// Best completed hypothesis, or the best unfinished one when nothing
    /// completed (`forced`).
    pub best: Hypothesis,
    pub forced: bool,
    /// Completed hypotheses, best first.
    pub completed: Vec<Hypothesis>,
    pub trace: SearchTrace,
}

#[derive(Clone)]
struct Snapshot {
    beams: Vec<Beam>,
    completed: Vec<(usize, Hypothesis)>,
    evaluated: EvaluatedSet,
    trace: SearchTrace,
}

/// Streaming driver: blocks are pushed as the encoder emits them and each
/// push decodes as far as boundary detection allows.
pub struct BlockwiseSession {
    setup: SearchSetup,
    store: BlockStore,
    /// `beams[i]` is `Ω_i` as last computed.
    beams: Vec<Beam>,
    /// Completed hypotheses with the step they ended at.
    completed: Vec<(usize, Hypothesis)>,
    evaluated: EvaluatedSet,
    trace: SearchTrace,
    /// State before the most recent non-final block was processed.
    checkpoint: Option<Snapshot>,
    result: Option<SearchResult>,
}

impl BlockwiseSession {
    pub fn new(scorers: &ScorerSet, config: &DecodeConfig, vocab: &Vocabulary) -> Result<Self> {
        let setup = SearchSetup::new(scorers, config, vocab)?;
        let store = BlockStore::new(setup.scorers());
        let beams = vec![setup.initial_beam()];
        let trace = SearchTrace {
            boundaries: vec![0],
            ..SearchTrace::default()
        };
        Ok(Self {
            setup,
            store,
            beams,
            completed: Vec::new(),
            evaluated: EvaluatedSet::new(),
            trace,
            checkpoint: None,
            result: None,
        })
    }

    pub fn blocks_received(&self) -> usize {
        self.store.blocks().len()
    }

    /// The boundary decoding resumes from, `I_{b}` after `b` pushes.
    pub fn last_boundary(&self) -> usize {
        *self.trace.boundaries.last().expect("I_0 always present")
    }

    pub fn evaluated(&self) -> &EvaluatedSet {
        &self.evaluated
    }

    pub fn trace(&self) -> &SearchTrace {
        &self.trace
    }

    /// Best hypothesis of the committed beam `Ω_{I_b}`.
    pub fn partial_best(&self) -> Option<&Hypothesis> {
        if let Some(r) = &self.result {
            return Some(&r.best);
        }
        self.beams.get(self.last_boundary()).and_then(Beam::best)
    }

    /// Adds the next block and decodes as far as possible. A block flagged
    /// `is_last` runs the search to completion.
    pub fn push_block(&mut self, block: EncodedBlock) -> Result<()> {
        if self.result.is_some() {
            return Err(Error::Finalized);
        }
        let is_last = block.is_last;
        let frames = block.num_frames();
        self.store.push(self.setup.scorers(), block)?;
        self.checkpoint = (!is_last).then(|| Snapshot {
            beams: self.beams.clone(),
            completed: self.completed.clone(),
            evaluated: self.evaluated.clone(),
            trace: self.trace.clone(),
        });
        self.trace.events.push(TraceEvent::Block {
            block: self.blocks_received(),
            frames,
            is_last,
            resume_from: self.last_boundary(),
        });
        if is_last {
            let r = self.final_phase()?;
            self.result = Some(r);
        } else {
            self.streaming_phase()?;
        }
        Ok(())
    }

    /// Ends the stream. If the last pushed block was not flagged `is_last`,
    /// its streaming pass is undone and it is decoded as the final block.
    pub fn finalize(mut self) -> Result<SearchResult> {
        if let Some(r) = self.result.take() {
            return Ok(r);
        }
        let snap = self.checkpoint.take().ok_or(Error::NoBlocks)?;
        let frames = self.store.blocks().last().map_or(0, EncodedBlock::num_frames);
        self.beams = snap.beams;
        self.completed = snap.completed;
        self.evaluated = snap.evaluated;
        self.trace = snap.trace;
        self.trace.events.push(TraceEvent::Block {
            block: self.blocks_received(),
            frames,
            is_last: true,
            resume_from: self.last_boundary(),
        });
        self.final_phase()
    }

    fn rewind(&mut self, to: usize) {
        self.beams.truncate(to + 1);
        self.completed.retain(|(step, _)| *step <= to);
    }

    fn record_step(&mut self, step: usize, phase: Phase, beam: &Beam) {
        self.trace.count_step(step);
        self.trace.events.push(TraceEvent::Step {
            step,
            block: self.blocks_received(),
            phase,
            beam: beam.hypotheses.iter().map(TraceHypothesis::from).collect(),
        });
    }

    /// Moves hypotheses ending in eos out of `beam` into the completed set.
    fn harvest(&mut self, step: usize, beam: &mut Beam) {
        let eos = self.setup.sos_eos();
        let block = self.blocks_received();
        let (done, open): (Vec<_>, Vec<_>) = std::mem::take(&mut beam.hypotheses)
            .into_iter()
            .partition(|h| h.last_token() == eos);
        beam.hypotheses = open;
        for h in done {
            self.trace.events.push(TraceEvent::Completed {
                step,
                block,
                hypothesis: TraceHypothesis::from(&h),
            });
            self.completed.push((step, h));
        }
    }

    fn set_boundary(&mut self, index: usize, reason: BoundaryReason) {
        self.rewind(index);
        self.trace.boundaries.push(index);
        self.trace.events.push(TraceEvent::IndexBoundary {
            block: self.blocks_received(),
            index,
            reason,
        });
    }

    /// Decoding with blocks `1..b`, `b < B`, until boundary detection fires.
    fn streaming_phase(&mut self) -> Result<()> {
        let prev_boundary = self.last_boundary();
        self.rewind(prev_boundary);
        let cap = self.setup.config().effective_i_max(self.store.num_frames());
        let mut i = prev_boundary + 1;
        loop {
            if i > cap {
                self.set_boundary(i - 1, BoundaryReason::LengthCap);
                return Ok(());
            }
            if self.beams[i - 1].is_empty() {
                self.set_boundary(i - 1, BoundaryReason::BeamExhausted);
                return Ok(());
            }
            let out = search_step(&self.beams[i - 1], &self.store, &self.setup)?;
            self.record_step(i, Phase::Streaming, &out.beam);
            let decision = self.check(&out);
            self.trace.events.push(TraceEvent::Check {
                step: i,
                block: self.blocks_received(),
                boundary: decision.boundary,
                entries: out
                    .beam
                    .hypotheses
                    .iter()
                    .zip(decision.reports)
                    .map(|(h, report)| CheckEntry {
                        tokens: h.tokens.clone(),
                        report,
                    })
                    .collect(),
            });
            if decision.boundary {
                let back = if self.setup.config().conservative && i >= 2 { i - 2 } else { i - 1 };
                self.set_boundary(back.max(prev_boundary), BoundaryReason::Detected);
                return Ok(());
            }
            let mut beam = out.beam;
            self.harvest(i, &mut beam);
            self.beams.push(beam);
            i += 1;
        }
    }

    fn check(&mut self, out: &StepOutcome) -> crate::bbd::BoundaryDecision {
        let config = self.setup.config();
        let parents = &self.beams[out.beam.output_index - 1].hypotheses;
        let inputs: Vec<BbdInput<'_>> = out
            .beam
            .hypotheses
            .iter()
            .zip(&out.parents)
            .map(|(h, &p)| BbdInput {
                tokens: &h.tokens,
                alpha: StepOutcome::bbd_alpha(h, config),
                alpha_prev: StepOutcome::bbd_alpha(&parents[p], config),
                parent_dist: &out.bbd_dists[p],
            })
            .collect();
        detect_boundary(&inputs, config, &mut self.evaluated)
    }

    fn best_completed(&self) -> Option<&Hypothesis> {
        self.completed
            .iter()
            .map(|(_, h)| h)
            .min_by(|a, b| rank(a.score_total, &a.tokens, b.score_total, &b.tokens))
    }

    /// Ordinary decoding over all blocks from `I_{B-1}` to the end.
    fn final_phase(&mut self) -> Result<SearchResult> {
        let start = self.last_boundary();
        self.rewind(start);
        let config = self.setup.config().clone();
        let cap = config.effective_i_max(self.store.num_frames());
        let mut i = start + 1;
        let reason = loop {
            if i > cap {
                break EndReason::LengthCap;
            }
            let prev = &self.beams[i - 1];
            let Some(active) = prev.best() else {
                break EndReason::BeamExhausted;
            };
            if let Some(done) = self.best_completed() {
                if done.score_total > active.score_total + config.end_margin {
                    break EndReason::EndingCriterion;
                }
            }
            let out = search_step(prev, &self.store, &self.setup)?;
            self.record_step(i, Phase::Final, &out.beam);
            let mut beam = out.beam;
            self.harvest(i, &mut beam);
            self.beams.push(beam);
            i += 1;
        };
        self.trace.events.push(TraceEvent::End { step: i - 1, reason });

        let mut completed: Vec<Hypothesis> = self.completed.iter().map(|(_, h)| h.clone()).collect();
        sort_hypotheses(&mut completed);
        let (best, forced) = match completed.first() {
            Some(h) => (h.clone(), false),
            None => {
                let h = self
                    .beams
                    .iter()
                    .rev()
                    .find_map(Beam::best)
                    .expect("Ω_0 is never empty")
                    .clone();
                (h, true)
            }
        };
        Ok(SearchResult {
            best,
            forced,
            completed,
            trace: std::mem::take(&mut self.trace),
        })
    }
}

/// Conventional beam search over a fully encoded utterance.
pub fn batch_beam_search(
    blocks: &[EncodedBlock],
    scorers: &ScorerSet,
    config: &DecodeConfig,
    vocab: &Vocabulary,
) -> Result<SearchResult> {
    if blocks.is_empty() {
        return Err(Error::NoBlocks);
    }
    let mut s = BlockwiseSession::new(scorers, config, vocab)?;
    for b in blocks {
        s.store.push(s.setup.scorers(), b.clone())?;
    }
    s.trace.events.push(TraceEvent::Block {
        block: blocks.len(),
        frames: s.store.num_frames(),
        is_last: true,
        resume_from: 0,
    });
    s.final_phase()
}

/// Blockwise synchronous beam search over a block stream; the last block
/// of the stream is treated as final whether or not it is flagged.
pub fn blockwise_synchronous_beam_search<I>(
    blocks: I,
    scorers: &ScorerSet,
    config: &DecodeConfig,
    vocab: &Vocabulary,
) -> Result<SearchResult>
where
    I: IntoIterator<Item = EncodedBlock>,
{
    let mut s = BlockwiseSession::new(scorers, config, vocab)?;
    let mut it = blocks.into_iter().peekable();
    while let Some(mut b) = it.next() {
        if it.peek().is_none() {
            b.is_last = true;
        }
        s.push_block(b)?;
    }
    s.finalize()
}
