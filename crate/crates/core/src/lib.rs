//! Streaming label-synchronous beam search over a contextual block encoder.
//!
//! The decoder consumes encoder blocks one at a time and extends a beam of
//! hypotheses until block boundary detection decides that the next token
//! needs input that has not been encoded yet. When the last block arrives
//! the search continues to completion like an ordinary beam search.
//!
//! ```
//! use blocksync::{BlockLayout, theoretical_delay};
//! let layout = BlockLayout::new(4, 8, 4, 4, 20.0).unwrap();
//! assert!((theoretical_delay(&layout) - 0.64).abs() < 1e-12);
//! ```

pub mod bbd;
pub mod config;
pub mod encoder;
pub mod error;
pub mod hypothesis;
pub mod layout;
pub mod model;
pub mod nn;
pub mod score;
pub mod scorers;
pub mod search;
pub mod tensor;
pub mod trace;
pub mod vocab;

pub use config::{combined_score, BbdScoreSource, DecodeConfig, ScoreComponents, ScorerKind};
pub use encoder::{theoretical_delay, ContextState, ContextualBlockEncoder, EncoderWeights, FeatureSequence};
pub use error::{Error, Result};
pub use hypothesis::{Beam, Hypothesis};
pub use layout::{BlockLayout, EncodedBlock};
pub use model::{ToyDims, ToyModel};
pub use score::{log_add, LogScore, LOG_ZERO};
pub use scorers::{Scorer, ScorerSet, ScorerState};
pub use search::{batch_beam_search, blockwise_synchronous_beam_search, BlockwiseSession, SearchResult};
pub use vocab::{TokenId, Vocabulary};

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        };
    }
    chapter!(introduction, "introduction.md");
    chapter!(blocks, "blocks.md");
    chapter!(encoding, "encoding.md");
    chapter!(ctc, "ctc.md");
    chapter!(boundary, "boundary.md");
    chapter!(streaming, "streaming.md");
    chapter!(cli, "cli.md");
}
