//! Decoding configuration and score fusion.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{weighted, LogScore};

/// Role a scorer plays in the fused score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Attention,
    Ctc,
    Lm,
}

impl ScorerKind {
    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::Attention => "attention",
            ScorerKind::Ctc => "ctc",
            ScorerKind::Lm => "lm",
        }
    }
}

/// Accumulated per-scorer log scores of a hypothesis.
pub type ScoreComponents = BTreeMap<ScorerKind, LogScore>;

/// Which scores feed the reliability test of block boundary detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BbdScoreSource {
    /// Decoder distribution and accumulated decoder score only.
    #[default]
    Attention,
    /// The fused (CTC and LM weighted) step scores and total score.
    Joint,
}

/// Full behavioral contract of one decoding run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// Maximum output length. `None` means two more than the number of
    /// encoded frames available.
    pub i_max: Option<usize>,
    pub ctc_weight: f64,
    pub lm_weight: f64,
    /// Rewind two output steps instead of one on a block boundary.
    pub conservative: bool,
    /// Treat repeated tokens (not only the end token) as boundary evidence.
    pub repetition_criterion: bool,
    pub bbd_score_source: BbdScoreSource,
    /// Fire the boundary only on `s < 0` instead of `s <= 0`.
    pub strict_boundary: bool,
    /// Decoding stops once the best completed score exceeds the best active
    /// score plus this margin.
    pub end_margin: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 10,
            i_max: None,
            ctc_weight: 0.0,
            lm_weight: 0.0,
            conservative: true,
            repetition_criterion: true,
            bbd_score_source: BbdScoreSource::Attention,
            strict_boundary: false,
            end_margin: 0.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.i_max == Some(0) {
            return Err(Error::Config("i_max must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(Error::WeightOutOfRange {
                name: "ctc_weight",
                value: self.ctc_weight,
            });
        }
        if !(self.lm_weight >= 0.0) || !self.lm_weight.is_finite() {
            return Err(Error::Config(format!(
                "lm weight must be a non-negative number, got {}",
                self.lm_weight
            )));
        }
        if !self.end_margin.is_finite() {
            return Err(Error::Config("end margin must be finite".into()));
        }
        Ok(())
    }

    /// Output length cap given the number of encoded frames seen so far.
    pub fn effective_i_max(&self, encoded_frames: usize) -> usize {
        self.i_max.unwrap_or(encoded_frames + 2)
    }

    pub fn weight(&self, kind: ScorerKind) -> f64 {
        match kind {
            ScorerKind::Attention => 1.0 - self.ctc_weight,
            ScorerKind::Ctc => self.ctc_weight,
            ScorerKind::Lm => self.lm_weight,
        }
    }

    /// Boundary trigger for a reliability score.
    pub fn is_unreliable(&self, s: f64) -> bool {
        if s.is_nan() {
            return true;
        }
        if self.strict_boundary {
            s < 0.0
        } else {
            s <= 0.0
        }
    }
}

/// `(1 - λ_ctc)·att + λ_ctc·ctc + λ_lm·lm`; absent entries contribute zero.
pub fn combined_score(components: &ScoreComponents, config: &DecodeConfig) -> Result<LogScore> {
    if !(0.0..=1.0).contains(&config.ctc_weight) {
        return Err(Error::WeightOutOfRange {
            name: "ctc_weight",
            value: config.ctc_weight,
        });
    }
    Ok(fuse(components, config))
}

/// [`combined_score`] without the weight check, for validated configs.
pub(crate) fn fuse(components: &ScoreComponents, config: &DecodeConfig) -> LogScore {
    components
        .iter()
        .map(|(&kind, &score)| weighted(config.weight(kind), score))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comps(entries: &[(ScorerKind, f64)]) -> ScoreComponents {
        entries.iter().copied().collect()
    }

    #[test]
    fn fusion_arithmetic() {
        let cfg = DecodeConfig {
            ctc_weight: 0.5,
            ..Default::default()
        };
        let s = combined_score(&comps(&[(ScorerKind::Attention, -2.0), (ScorerKind::Ctc, -4.0)]), &cfg);
        assert_eq!(s.unwrap(), -3.0);

        let cfg = DecodeConfig::default();
        assert_eq!(combined_score(&comps(&[(ScorerKind::Attention, -2.0)]), &cfg).unwrap(), -2.0);

        let cfg = DecodeConfig {
            ctc_weight: 0.3,
            lm_weight: 0.3,
            ..Default::default()
        };
        let s = combined_score(
            &comps(&[
                (ScorerKind::Attention, -1.0),
                (ScorerKind::Ctc, -2.0),
                (ScorerKind::Lm, -3.0),
            ]),
            &cfg,
        )
        .unwrap();
        assert!((s + 2.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_ctc_weight() {
        let cfg = DecodeConfig {
            ctc_weight: 1.2,
            ..Default::default()
        };
        assert!(combined_score(&ScoreComponents::new(), &cfg).is_err());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn boundary_comparison_modes() {
        let mut cfg = DecodeConfig::default();
        assert!(cfg.is_unreliable(0.0));
        cfg.strict_boundary = true;
        assert!(!cfg.is_unreliable(0.0));
        assert!(cfg.is_unreliable(-1e-12));
    }
}
