//! Incremental scorers.
//!
//! Every scorer maps a hypothesis prefix and the encoder blocks available so
//! far to log scores for each possible next token. Per-hypothesis state is
//! carried in an opaque [`ScorerState`] so that a hypothesis can be resumed,
//! cloned or rewound without the scorer knowing about the search.

mod ctc;
mod decoder;
mod kd;
mod lm;
mod table;

pub use ctc::{CtcPosteriors, CtcPrefixComputer, CtcScorer, CtcState, CtcStats};
pub use decoder::{AttentionDecoder, DecoderLayer, DecoderState, DecoderWeights};
pub use kd::{kd_combined_loss, kd_loss};
pub use lm::{BigramLm, UniformLm};
pub use table::{TableScorer, TableScript};

use std::any::Any;
use std::fmt;
use std::sync::Arc;

use crate::config::{DecodeConfig, ScorerKind};
use crate::error::{Error, Result};
use crate::layout::EncodedBlock;
use crate::vocab::TokenId;

/// Opaque, cheaply clonable per-hypothesis scorer state.
#[derive(Clone)]
pub struct ScorerState(Arc<dyn Any + Send + Sync>);

impl ScorerState {
    pub fn new<T: Any + Send + Sync>(value: T) -> Self {
        Self(Arc::new(value))
    }

    pub fn from_arc<T: Any + Send + Sync>(value: Arc<T>) -> Self {
        Self(value)
    }

    pub fn downcast<T: Any>(&self) -> Option<&T> {
        self.0.downcast_ref()
    }

    pub(crate) fn expect<T: Any>(&self, scorer: &str) -> Result<&T> {
        self.downcast()
            .ok_or_else(|| Error::Config(format!("state handed to the {scorer} scorer belongs to another scorer")))
    }
}

impl fmt::Debug for ScorerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScorerState(..)")
    }
}

/// Output of one scoring step: a log score for every vocabulary entry plus
/// whatever the scorer needs to build the states of chosen extensions.
pub struct StepScores {
    pub log_probs: Vec<f64>,
    payload: Arc<dyn Any + Send + Sync>,
}

impl StepScores {
    pub fn new<T: Any + Send + Sync>(log_probs: Vec<f64>, payload: T) -> Self {
        Self {
            log_probs,
            payload: Arc::new(payload),
        }
    }

    pub fn payload<T: Any>(&self) -> Option<&T> {
        self.payload.downcast_ref()
    }
}

impl fmt::Debug for StepScores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StepScores").field("log_probs", &self.log_probs).finish_non_exhaustive()
    }
}

/// Scorer-specific data derived from the blocks received so far (for
/// example projected encoder memory). Grows as blocks arrive.
pub struct BlockCache(Box<dyn Any + Send + Sync>);

impl BlockCache {
    pub fn new<T: Any + Send + Sync>(value: T) -> Self {
        Self(Box::new(value))
    }

    pub fn empty() -> Self {
        Self::new(())
    }

    pub fn get<T: Any>(&self) -> Option<&T> {
        self.0.downcast_ref()
    }

    pub fn get_mut<T: Any>(&mut self) -> Option<&mut T> {
        self.0.downcast_mut()
    }
}

/// What a scorer may look at: the blocks `h_1..h_b` and its own cache.
#[derive(Clone, Copy)]
pub struct ScoringContext<'a> {
    pub blocks: &'a [EncodedBlock],
    pub cache: &'a BlockCache,
}

impl ScoringContext<'_> {
    pub fn num_frames(&self) -> usize {
        self.blocks.iter().map(EncodedBlock::num_frames).sum()
    }
}

/// The incremental scorer contract.
pub trait Scorer: Send + Sync {
    fn kind(&self) -> ScorerKind;

    fn name(&self) -> &str {
        self.kind().name()
    }

    /// State of the bare start hypothesis.
    fn init(&self) -> ScorerState;

    fn new_cache(&self) -> BlockCache {
        BlockCache::empty()
    }

    /// Folds a newly arrived block into the cache.
    fn ingest(&self, _cache: &mut BlockCache, _block: &EncodedBlock) -> Result<()> {
        Ok(())
    }

    /// Log scores for every next token of `prefix` given `ctx`. `state` must
    /// be the state of `prefix`.
    fn score_step(&self, state: &ScorerState, prefix: &[TokenId], ctx: &ScoringContext<'_>) -> Result<StepScores>;

    /// State of `prefix + [token]` from the step that scored `prefix`.
    fn extend(&self, step: &StepScores, prefix: &[TokenId], token: TokenId) -> ScorerState;
}

/// Scorers taking part in one search, at most one per [`ScorerKind`].
#[derive(Clone)]
pub struct ScorerSet {
    scorers: Vec<Arc<dyn Scorer>>,
}

impl fmt::Debug for ScorerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.scorers.iter().map(|s| s.name())).finish()
    }
}

impl ScorerSet {
    /// A set with the given attention-role scorer.
    pub fn new(attention: Arc<dyn Scorer>) -> Result<Self> {
        Self::default_empty().with(attention)
    }

    fn default_empty() -> Self {
        Self { scorers: Vec::new() }
    }

    pub fn with(mut self, scorer: Arc<dyn Scorer>) -> Result<Self> {
        if self.scorers.iter().any(|s| s.kind() == scorer.kind()) {
            return Err(Error::Config(format!("duplicate {} scorer", scorer.kind().name())));
        }
        self.scorers.push(scorer);
        self.scorers.sort_by_key(|s| s.kind());
        Ok(self)
    }

    pub fn with_opt(self, scorer: Option<Arc<dyn Scorer>>) -> Result<Self> {
        match scorer {
            Some(s) => self.with(s),
            None => Ok(self),
        }
    }

    /// Drops CTC and LM scorers whose weight is zero.
    pub fn active(&self, config: &DecodeConfig) -> Self {
        Self {
            scorers: self
                .scorers
                .iter()
                .filter(|s| s.kind() == ScorerKind::Attention || config.weight(s.kind()) != 0.0)
                .cloned()
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Scorer>> {
        self.scorers.iter()
    }

    pub fn get(&self, kind: ScorerKind) -> Option<&Arc<dyn Scorer>> {
        self.scorers.iter().find(|s| s.kind() == kind)
    }

    pub fn has_attention(&self) -> bool {
        self.get(ScorerKind::Attention).is_some()
    }

    pub fn len(&self) -> usize {
        self.scorers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scorers.is_empty()
    }
}

/// Blocks received so far together with every scorer's cache.
pub struct BlockStore {
    blocks: Vec<EncodedBlock>,
    caches: Vec<(ScorerKind, BlockCache)>,
}

impl BlockStore {
    pub fn new(set: &ScorerSet) -> Self {
        Self {
            blocks: Vec::new(),
            caches: set.iter().map(|s| (s.kind(), s.new_cache())).collect(),
        }
    }

    pub fn push(&mut self, set: &ScorerSet, block: EncodedBlock) -> Result<()> {
        if block.num_frames() == 0 || block.vectors.nrows() != block.num_frames() {
            return Err(Error::EmptyInput);
        }
        if let Some(prev) = self.blocks.last() {
            if block.frame_start != prev.frame_end {
                return Err(Error::Config(format!(
                    "block {} starts at frame {}, previous block ended at {}",
                    block.index, block.frame_start, prev.frame_end
                )));
            }
        }
        for scorer in set.iter() {
            let cache = self
                .caches
                .iter_mut()
                .find(|(k, _)| *k == scorer.kind())
                .map(|(_, c)| c)
                .ok_or_else(|| Error::Config("block store built for another scorer set".into()))?;
            scorer.ingest(cache, &block)?;
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn blocks(&self) -> &[EncodedBlock] {
        &self.blocks
    }

    pub fn num_frames(&self) -> usize {
        self.blocks.iter().map(EncodedBlock::num_frames).sum()
    }

    /// Scoring context of `kind` over every block received so far.
    pub fn context(&self, kind: ScorerKind) -> ScoringContext<'_> {
        let cache = &self
            .caches
            .iter()
            .find(|(k, _)| *k == kind)
            .expect("cache exists for every scorer in the set")
            .1;
        ScoringContext {
            blocks: &self.blocks,
            cache,
        }
    }
}
