use std::cmp::Ordering;

use crate::config::{BbdScoreSource, DecodeConfig, ScorerKind};
use crate::error::{Error, Result};
use crate::hypothesis::{Beam, Hypothesis};
use crate::score::{weighted, LogScore, LOG_ZERO};
use crate::scorers::{BlockStore, ScorerSet, StepScores};
use crate::vocab::{TokenId, Vocabulary};

/// Scorers, configuration and special tokens of one search.
#[derive(Debug, Clone)]
pub struct SearchSetup {
    pub(crate) scorers: ScorerSet,
    pub(crate) config: DecodeConfig,
    pub(crate) sos_eos: TokenId,
    pub(crate) blank: TokenId,
    pub(crate) vocab_size: usize,
}

impl SearchSetup {
    /// Validates the configuration and drops zero-weight CTC/LM scorers.
    pub fn new(scorers: &ScorerSet, config: &DecodeConfig, vocab: &Vocabulary) -> Result<Self> {
        config.validate()?;
        if !scorers.has_attention() {
            return Err(Error::Config("an attention-role scorer is required".into()));
        }
        Ok(Self {
            scorers: scorers.active(config),
            config: config.clone(),
            sos_eos: vocab.sos_eos_id(),
            blank: vocab.blank_id(),
            vocab_size: vocab.len(),
        })
    }

    pub fn config(&self) -> &DecodeConfig {
        &self.config
    }

    pub fn scorers(&self) -> &ScorerSet {
        &self.scorers
    }

    pub fn sos_eos(&self) -> TokenId {
        self.sos_eos
    }

    /// `Ω_0`: the bare start hypothesis.
    pub fn initial_beam(&self) -> Beam {
        let states = self.scorers.iter().map(|s| (s.kind(), s.init())).collect();
        Beam::new(vec![Hypothesis::initial(self.sos_eos, states)], 0)
    }
}

/// Result of expanding one beam.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Top-K extensions, best first.
    pub beam: Beam,
    /// For each hypothesis of `beam`, its parent's position in the input beam.
    pub parents: Vec<usize>,
    /// For each input hypothesis, the next-token distribution boundary
    /// detection compares against (attention only or fused).
    pub bbd_dists: Vec<Vec<LogScore>>,
}

impl StepOutcome {
    /// Parent score matching the configured detection source.
    pub fn bbd_alpha(h: &Hypothesis, config: &DecodeConfig) -> LogScore {
        match config.bbd_score_source {
            BbdScoreSource::Attention => h.component(ScorerKind::Attention),
            BbdScoreSource::Joint => h.score_total,
        }
    }
}

struct Candidate {
    total: LogScore,
    parent: usize,
    token: TokenId,
}

/// Expands every hypothesis of `beam` by every non-blank token using the
/// blocks in `store` and keeps the best `K`. Ties are broken towards the
/// lexicographically smaller token sequence.
pub fn search_step(beam: &Beam, store: &BlockStore, setup: &SearchSetup) -> Result<StepOutcome> {
    if beam.is_empty() {
        return Err(Error::Config("cannot expand an empty beam".into()));
    }
    let config = &setup.config;
    let scorers: Vec<_> = setup.scorers.iter().collect();
    let weights: Vec<f64> = scorers.iter().map(|s| config.weight(s.kind())).collect();

    let mut steps: Vec<Vec<StepScores>> = Vec::with_capacity(beam.len());
    for hyp in &beam.hypotheses {
        let mut per = Vec::with_capacity(scorers.len());
        for s in &scorers {
            let state = hyp
                .scorer_states
                .get(&s.kind())
                .ok_or_else(|| Error::Config(format!("hypothesis lacks {} state", s.name())))?;
            let out = s.score_step(state, &hyp.tokens, &store.context(s.kind()))?;
            if out.log_probs.len() != setup.vocab_size {
                return Err(Error::Shape(format!(
                    "{} scored {} tokens, vocabulary has {}",
                    s.name(),
                    out.log_probs.len(),
                    setup.vocab_size
                )));
            }
            per.push(out);
        }
        steps.push(per);
    }

    let mut candidates = Vec::new();
    for (p, hyp) in beam.hypotheses.iter().enumerate() {
        let comps: Vec<LogScore> = scorers.iter().map(|s| hyp.component(s.kind())).collect();
        for token in 0..setup.vocab_size {
            if token == setup.blank {
                continue;
            }
            let mut total = 0.0;
            for (k, step) in steps[p].iter().enumerate() {
                total += weighted(weights[k], comps[k] + step.log_probs[token]);
            }
            if total.is_nan() || total == LOG_ZERO {
                continue;
            }
            candidates.push(Candidate { total, parent: p, token });
        }
    }
    if candidates.is_empty() {
        return Err(Error::BeamCollapse {
            step: beam.output_index + 1,
        });
    }
    let order = |a: &Candidate, b: &Candidate| -> Ordering {
        b.total
            .partial_cmp(&a.total)
            .expect("NaN filtered")
            .then_with(|| beam.hypotheses[a.parent].tokens.cmp(&beam.hypotheses[b.parent].tokens))
            .then_with(|| a.token.cmp(&b.token))
    };
    let k = config.beam_width;
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, order);
        candidates.truncate(k);
    }
    candidates.sort_by(order);

    let mut hyps = Vec::with_capacity(candidates.len());
    let mut parents = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let parent = &beam.hypotheses[c.parent];
        let mut tokens = parent.tokens.clone();
        tokens.push(c.token);
        let mut score_components = parent.score_components.clone();
        let mut scorer_states = parent.scorer_states.clone();
        for (s, step) in scorers.iter().zip(&steps[c.parent]) {
            *score_components.entry(s.kind()).or_insert(0.0) += step.log_probs[c.token];
            scorer_states.insert(s.kind(), s.extend(step, &parent.tokens, c.token));
        }
        hyps.push(Hypothesis {
            tokens,
            score_total: c.total,
            score_components,
            scorer_states,
        });
        parents.push(c.parent);
    }

    let att = scorers
        .iter()
        .position(|s| s.kind() == ScorerKind::Attention)
        .expect("setup requires an attention scorer");
    let bbd_dists = steps
        .iter()
        .map(|per| match config.bbd_score_source {
            BbdScoreSource::Attention => per[att].log_probs.clone(),
            BbdScoreSource::Joint => (0..setup.vocab_size)
                .map(|t| per.iter().zip(&weights).map(|(s, &w)| weighted(w, s.log_probs[t])).sum())
                .collect(),
        })
        .collect();

    Ok(StepOutcome {
        beam: Beam {
            hypotheses: hyps,
            output_index: beam.output_index + 1,
        },
        parents,
        bbd_dists,
    })
}
