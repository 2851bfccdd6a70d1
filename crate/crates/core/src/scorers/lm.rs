//! Prefix-only language models for shallow fusion.

use ndarray::Array2;

use super::{Scorer, ScorerState, ScoringContext, StepScores};
use crate::config::ScorerKind;
use crate::error::{Error, Result};
use crate::score::LogScore;
use crate::tensor::TensorMap;
use crate::vocab::{TokenId, Vocabulary};

const NORM_TOLERANCE: f64 = 1e-6;

/// Bigram model: row `a` holds `log P(· | a)`. The state is the last token.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramLm {
    log_probs: Array2<f64>,
    sos_eos: TokenId,
}

impl BigramLm {
    /// From a `[|V| x |V|]` matrix of probabilities whose rows sum to one.
    pub fn new(probs: Array2<f64>, vocab: &Vocabulary) -> Result<Self> {
        let v = vocab.len();
        if probs.dim() != (v, v) {
            return Err(Error::Shape(format!("bigram table is {:?}, vocabulary has {v} entries", probs.dim())));
        }
        for (a, row) in probs.rows().into_iter().enumerate() {
            let sum = row.sum();
            if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Config(format!("bigram row {a} sums to {sum}")));
            }
        }
        Ok(Self {
            log_probs: probs.mapv(f64::ln),
            sos_eos: vocab.sos_eos_id(),
        })
    }

    pub fn from_tensors(t: &TensorMap, vocab: &Vocabulary) -> Result<Self> {
        Self::new(t.matrix("lm.bigram")?, vocab)
    }

    pub fn write_tensors(&self, t: &mut TensorMap) {
        t.insert_matrix("lm.bigram", &self.log_probs.mapv(f64::exp));
    }

    /// `log P(· | last)`.
    pub fn lm_score_step(&self, last: TokenId) -> Vec<LogScore> {
        self.log_probs.row(last).to_vec()
    }
}

impl Scorer for BigramLm {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Lm
    }

    fn init(&self) -> ScorerState {
        ScorerState::new(self.sos_eos)
    }

    fn score_step(&self, state: &ScorerState, _prefix: &[TokenId], _ctx: &ScoringContext<'_>) -> Result<StepScores> {
        let last = *state.expect::<TokenId>("lm")?;
        Ok(StepScores::new(self.lm_score_step(last), ()))
    }

    fn extend(&self, _step: &StepScores, _prefix: &[TokenId], token: TokenId) -> ScorerState {
        ScorerState::new(token)
    }
}

/// Uniform distribution over the whole vocabulary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformLm {
    vocab_size: usize,
}

impl UniformLm {
    pub fn new(vocab: &Vocabulary) -> Self {
        Self { vocab_size: vocab.len() }
    }
}

impl Scorer for UniformLm {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Lm
    }

    fn init(&self) -> ScorerState {
        ScorerState::new(())
    }

    fn score_step(&self, _state: &ScorerState, _prefix: &[TokenId], _ctx: &ScoringContext<'_>) -> Result<StepScores> {
        let lp = -(self.vocab_size as f64).ln();
        Ok(StepScores::new(vec![lp; self.vocab_size], ()))
    }

    fn extend(&self, _step: &StepScores, _prefix: &[TokenId], _token: TokenId) -> ScorerState {
        ScorerState::new(())
    }
}
