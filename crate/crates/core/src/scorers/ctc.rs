//! CTC prefix scoring that resumes as encoder blocks arrive.
//!
//! For a prefix `g` the state keeps, for every frame `t` seen so far, the
//! probability `γᴺ_t(g)` of all alignments of frames `1..t` that collapse to
//! `g` and end in a non-blank, and `γᴮ_t(g)` for those ending in blank.
//! With `Φ_t = γᴮ_{t-1}(g) + [last(g) ≠ c] γᴺ_{t-1}(g)`:
//!
//! ```text
//! γᴺ_t(g·c) = (γᴺ_{t-1}(g·c) + Φ_t) p(c | t)
//! γᴮ_t(g·c) = (γᴮ_{t-1}(g·c) + γᴺ_{t-1}(g·c)) p(blank | t)
//! ψ(g·c)    = Σ_{t ≤ T} Φ_t p(c | t)
//! ```
//!
//! `ψ` is the prefix probability (every alignment whose collapse starts
//! with `g·c`); ending the hypothesis scores `γᴺ_T(g) + γᴮ_T(g)`. Everything
//! is carried in the log domain. When frames `T+1..T'` arrive only those
//! columns are computed, for the hypothesis and each of its ancestors.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{BlockCache, Scorer, ScorerState, ScoringContext, StepScores};
use crate::config::ScorerKind;
use crate::error::{Error, Result};
use crate::layout::EncodedBlock;
use crate::nn::Linear;
use crate::score::{log_add, log_softmax, log_sum_exp, LogScore, LOG_ZERO};
use crate::vocab::{TokenId, Vocabulary};

/// Tolerance on posterior rows summing to one.
pub const POSTERIOR_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
struct CtcNode {
    token: TokenId,
    parent: Option<Arc<CtcNode>>,
    gamma_n: Vec<LogScore>,
    gamma_b: Vec<LogScore>,
    /// `γᴺ_t + γᴮ_t`, shared by every extension of this prefix.
    total: Vec<LogScore>,
    psi: LogScore,
}

/// Columns being appended to a node.
struct Columns {
    gamma_n: Vec<LogScore>,
    gamma_b: Vec<LogScore>,
    total: Vec<LogScore>,
    emit: Vec<LogScore>,
}

impl Columns {
    fn of(node: &CtcNode) -> Self {
        Self {
            gamma_n: node.gamma_n.clone(),
            gamma_b: node.gamma_b.clone(),
            total: node.total.clone(),
            emit: Vec::new(),
        }
    }

    fn empty(frames: usize) -> Self {
        let mut c = Self {
            gamma_n: Vec::with_capacity(frames + 1),
            gamma_b: Vec::with_capacity(frames + 1),
            total: Vec::with_capacity(frames + 1),
            emit: Vec::with_capacity(frames),
        };
        c.gamma_n.push(LOG_ZERO);
        c.gamma_b.push(LOG_ZERO);
        c.total.push(LOG_ZERO);
        c
    }

    fn into_node(self, token: TokenId, parent: Option<Arc<CtcNode>>, psi: LogScore) -> Arc<CtcNode> {
        Arc::new(CtcNode {
            token,
            parent,
            gamma_n: self.gamma_n,
            gamma_b: self.gamma_b,
            total: self.total,
            psi: log_add(psi, log_sum_exp(&self.emit)),
        })
    }
}

impl CtcNode {
    fn frames(&self) -> usize {
        self.gamma_n.len() - 1
    }
}

/// CTC state of one prefix over the frames scored so far.
#[derive(Debug, Clone)]
pub struct CtcState {
    node: Arc<CtcNode>,
}

impl CtcState {
    /// `T_b`, the last frame folded into the state.
    pub fn frames(&self) -> usize {
        self.node.frames()
    }

    /// `log ψ(prefix)` at `T_b`.
    pub fn prefix_score(&self) -> LogScore {
        self.node.psi
    }

    /// `log(γᴺ_{T_b} + γᴮ_{T_b})`: all `T_b` frames collapse to exactly the prefix.
    pub fn complete_score(&self) -> LogScore {
        self.node.total[self.frames()]
    }

    pub fn gamma_nonblank(&self) -> &[LogScore] {
        &self.node.gamma_n
    }

    pub fn gamma_blank(&self) -> &[LogScore] {
        &self.node.gamma_b
    }

    /// Labels of the prefix, excluding the start token.
    pub fn labels(&self) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut cur = Some(&self.node);
        while let Some(n) = cur {
            if n.parent.is_some() {
                out.push(n.token);
            }
            cur = n.parent.as_ref();
        }
        out.reverse();
        out
    }
}

/// Counts of γ columns computed, split by whether they resumed an existing
/// prefix (new frames only) or built a fresh extension.
#[derive(Debug, Default)]
pub struct CtcStats {
    resumed: AtomicU64,
    extension: AtomicU64,
}

impl CtcStats {
    pub fn resumed_columns(&self) -> u64 {
        self.resumed.load(Ordering::Relaxed)
    }

    pub fn extension_columns(&self) -> u64 {
        self.extension.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.resumed.store(0, Ordering::Relaxed);
        self.extension.store(0, Ordering::Relaxed);
    }
}

/// The prefix recursion over explicit log-posterior rows.
#[derive(Debug, Clone)]
pub struct CtcPrefixComputer {
    blank: TokenId,
    eos: TokenId,
    vocab_size: usize,
    stats: Arc<CtcStats>,
}

impl CtcPrefixComputer {
    pub fn new(vocab: &Vocabulary) -> Self {
        Self {
            blank: vocab.blank_id(),
            eos: vocab.sos_eos_id(),
            vocab_size: vocab.len(),
            stats: Arc::default(),
        }
    }

    pub fn stats(&self) -> &CtcStats {
        &self.stats
    }

    /// State of the bare start prefix before any frame.
    pub fn init(&self) -> CtcState {
        CtcState {
            node: Arc::new(CtcNode {
                token: self.eos,
                parent: None,
                gamma_n: vec![LOG_ZERO],
                gamma_b: vec![0.0],
                total: vec![0.0],
                psi: 0.0,
            }),
        }
    }

    fn check_rows(&self, rows: &[Vec<f64>], from: usize) -> Result<()> {
        for (t, row) in rows.iter().enumerate().skip(from) {
            if row.len() != self.vocab_size {
                return Err(Error::Ctc(format!(
                    "frame {} has {} posteriors, vocabulary has {}",
                    t + 1,
                    row.len(),
                    self.vocab_size
                )));
            }
            let sum: f64 = row.iter().map(|l| l.exp()).sum();
            if (sum - 1.0).abs() > POSTERIOR_SUM_TOLERANCE {
                return Err(Error::Ctc(format!("posteriors of frame {} sum to {sum}", t + 1)));
            }
        }
        Ok(())
    }

    /// Brings `state` up to `rows.len()` frames, computing only new columns.
    pub fn resume(&self, state: &CtcState, rows: &[Vec<f64>]) -> Result<CtcState> {
        if rows.len() < state.frames() {
            return Err(Error::Ctc(format!(
                "state has seen {} frames, only {} given",
                state.frames(),
                rows.len()
            )));
        }
        self.check_rows(rows, state.frames())?;
        Ok(CtcState {
            node: self.resume_node(&state.node, rows),
        })
    }

    fn resume_node(&self, node: &Arc<CtcNode>, rows: &[Vec<f64>]) -> Arc<CtcNode> {
        let target = rows.len();
        let from = node.frames();
        if from == target {
            return Arc::clone(node);
        }
        self.stats.resumed.fetch_add((target - from) as u64, Ordering::Relaxed);
        let mut cols = Columns::of(node);
        let parent = match &node.parent {
            None => {
                for t in from + 1..=target {
                    let gb = cols.gamma_b[t - 1] + rows[t - 1][self.blank];
                    cols.gamma_n.push(LOG_ZERO);
                    cols.gamma_b.push(gb);
                    cols.total.push(gb);
                }
                None
            }
            Some(p) => {
                let p = self.resume_node(p, rows);
                for t in from + 1..=target {
                    self.push_column(&p, node.token, t, rows, &mut cols);
                }
                Some(p)
            }
        };
        cols.into_node(node.token, parent, node.psi)
    }

    #[inline]
    fn push_column(&self, parent: &CtcNode, c: TokenId, t: usize, rows: &[Vec<f64>], cols: &mut Columns) {
        let row = &rows[t - 1];
        let phi = if parent.token == c && parent.parent.is_some() {
            parent.gamma_b[t - 1]
        } else {
            parent.total[t - 1]
        };
        let gn = log_add(cols.gamma_n[t - 1], phi) + row[c];
        let gb = cols.total[t - 1] + row[self.blank];
        cols.gamma_n.push(gn);
        cols.gamma_b.push(gb);
        cols.total.push(log_add(gn, gb));
        cols.emit.push(phi + row[c]);
    }

    fn child(&self, parent: &Arc<CtcNode>, c: TokenId, rows: &[Vec<f64>]) -> Arc<CtcNode> {
        let frames = parent.frames();
        self.stats.extension.fetch_add(frames as u64, Ordering::Relaxed);
        let mut cols = Columns::empty(frames);
        for t in 1..=frames {
            self.push_column(parent, c, t, rows, &mut cols);
        }
        cols.into_node(c, Some(Arc::clone(parent)), LOG_ZERO)
    }

    /// Log score of `prefix + [extension]` over `rows`: the prefix
    /// probability for a label, or the complete-sequence probability of the
    /// prefix when `extension` is the end token. Returns the extended state
    /// (the resumed prefix state for the end token).
    pub fn prefix_score(&self, state: &CtcState, extension: TokenId, rows: &[Vec<f64>]) -> Result<(LogScore, CtcState)> {
        if extension == self.blank {
            return Err(Error::Ctc("the blank symbol cannot extend a prefix".into()));
        }
        if extension >= self.vocab_size {
            return Err(Error::Ctc(format!("token {extension} outside the vocabulary")));
        }
        let g = self.resume(state, rows)?;
        if extension == self.eos {
            return Ok((g.complete_score(), g));
        }
        let node = self.child(&g.node, extension, rows);
        Ok((node.psi, CtcState { node }))
    }
}

/// Where frame posteriors come from.
#[derive(Debug, Clone)]
pub enum CtcPosteriors {
    /// `log_softmax(h W + b)` of each encoded frame.
    Projection(Linear),
    /// Precomputed log posteriors indexed by downsampled frame.
    Fixed(Vec<Vec<f64>>),
}

impl CtcPosteriors {
    /// Parses `T N` followed by `T` rows of `N` probabilities, `N` being the
    /// vocabulary size (blank included).
    pub fn parse(text: &str, vocab_size: usize) -> Result<Self> {
        const WHAT: &str = "ctc posterior file";
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or_else(|| Error::parse(WHAT, 1, "missing header"))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|x| x.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(WHAT, hline, "header must be `T N`"))?;
        if h.len() != 2 {
            return Err(Error::parse(WHAT, hline, "header must be `T N`"));
        }
        if h[1] != vocab_size {
            return Err(Error::parse(
                WHAT,
                hline,
                format!("{} columns declared, vocabulary has {vocab_size} entries", h[1]),
            ));
        }
        let mut rows = Vec::with_capacity(h[0]);
        for (lineno, line) in lines {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(WHAT, lineno, "bad number"))?;
            if row.len() != h[1] {
                return Err(Error::parse(WHAT, lineno, format!("expected {} values", h[1])));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > POSTERIOR_SUM_TOLERANCE {
                return Err(Error::parse(WHAT, lineno, format!("probabilities sum to {sum}")));
            }
            rows.push(row.iter().map(|p| p.ln()).collect());
        }
        if rows.len() != h[0] {
            return Err(Error::parse(WHAT, hline, format!("{} rows declared, {} found", h[0], rows.len())));
        }
        Ok(CtcPosteriors::Fixed(rows))
    }

    pub fn load(path: impl AsRef<Path>, vocab_size: usize) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, vocab_size)
    }

    fn rows_for(&self, block: &EncodedBlock) -> Result<Vec<Vec<f64>>> {
        match self {
            CtcPosteriors::Projection(lin) => Ok(lin
                .forward(block.vectors.view())
                .rows()
                .into_iter()
                .map(|r| log_softmax(&r.to_vec()))
                .collect()),
            CtcPosteriors::Fixed(all) => {
                if block.frame_end > all.len() {
                    return Err(Error::Ctc(format!(
                        "block {} ends at frame {}, posteriors cover {}",
                        block.index,
                        block.frame_end,
                        all.len()
                    )));
                }
                Ok(all[block.frame_start..block.frame_end].to_vec())
            }
        }
    }
}

struct CtcFrames(Vec<Vec<f64>>);

struct CtcStep {
    parent: CtcState,
    children: Vec<Option<CtcState>>,
}

/// CTC scorer. Step scores are `log ψ(g·c) − log ψ(g)` at the current
/// frame count, so the accumulated CTC component of a hypothesis decoded
/// against a fixed block set equals its prefix score.
#[derive(Debug, Clone)]
pub struct CtcScorer {
    computer: CtcPrefixComputer,
    posteriors: CtcPosteriors,
}

impl CtcScorer {
    pub fn new(vocab: &Vocabulary, posteriors: CtcPosteriors) -> Result<Self> {
        if let CtcPosteriors::Projection(lin) = &posteriors {
            if lin.bias.len() != vocab.len() {
                return Err(Error::Shape(format!(
                    "ctc projection has {} outputs, vocabulary has {}",
                    lin.bias.len(),
                    vocab.len()
                )));
            }
        }
        Ok(Self {
            computer: CtcPrefixComputer::new(vocab),
            posteriors,
        })
    }

    pub fn computer(&self) -> &CtcPrefixComputer {
        &self.computer
    }

    pub fn stats(&self) -> &CtcStats {
        self.computer.stats()
    }
}

fn delta(child: LogScore, parent: LogScore) -> LogScore {
    if parent == LOG_ZERO {
        LOG_ZERO
    } else {
        child - parent
    }
}

impl Scorer for CtcScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Ctc
    }

    fn init(&self) -> ScorerState {
        ScorerState::new(self.computer.init())
    }

    fn new_cache(&self) -> BlockCache {
        BlockCache::new(CtcFrames(Vec::new()))
    }

    fn ingest(&self, cache: &mut BlockCache, block: &EncodedBlock) -> Result<()> {
        let frames = cache
            .get_mut::<CtcFrames>()
            .ok_or_else(|| Error::Config("foreign cache given to the ctc scorer".into()))?;
        let rows = self.posteriors.rows_for(block)?;
        let start = frames.0.len();
        frames.0.extend(rows);
        self.computer.check_rows(&frames.0, start)
    }

    fn score_step(&self, state: &ScorerState, _prefix: &[TokenId], ctx: &ScoringContext<'_>) -> Result<StepScores> {
        let st = state.expect::<CtcState>("ctc")?;
        let rows = &ctx
            .cache
            .get::<CtcFrames>()
            .ok_or_else(|| Error::Config("foreign cache given to the ctc scorer".into()))?
            .0;
        if rows.len() < st.frames() {
            return Err(Error::NonMonotoneBlocks {
                seen: st.frames(),
                given: rows.len(),
            });
        }
        let g = self.computer.resume(st, rows)?;
        let psi_g = g.prefix_score();
        let v = self.computer.vocab_size;
        let mut log_probs = vec![LOG_ZERO; v];
        let mut children = vec![None; v];
        for (c, slot) in children.iter_mut().enumerate() {
            if c == self.computer.blank {
                continue;
            }
            if c == self.computer.eos {
                log_probs[c] = delta(g.complete_score(), psi_g);
                continue;
            }
            let node = self.computer.child(&g.node, c, rows);
            log_probs[c] = delta(node.psi, psi_g);
            *slot = Some(CtcState { node });
        }
        Ok(StepScores::new(log_probs, CtcStep { parent: g, children }))
    }

    fn extend(&self, step: &StepScores, _prefix: &[TokenId], token: TokenId) -> ScorerState {
        let step = step.payload::<CtcStep>().expect("payload written by score_step");
        let st = step
            .children
            .get(token)
            .and_then(Clone::clone)
            .unwrap_or_else(|| step.parent.clone());
        ScorerState::new(st)
    }
}
