//! Contextual block encoder.
//!
//! The feature sequence is downsampled, cut into overlapping blocks
//! (left context, center, right context) and each block is encoded with a
//! stack of self-attention layers. A context embedding produced by layer
//! `n` of block `b` is handed to layer `n + 1` of block `b + 1`, so
//! information flows forward across blocks without attending to them.
//! Only the center frames of each block are emitted.

mod contextual;
mod segment;

pub use contextual::{encode_block, ContextState, ContextualBlockEncoder, EncoderLayer, EncoderWeights};
pub use segment::{block_spans, segment_blocks, BlockInput, BlockSpan, Frontend};

pub use crate::nn::{attention, multi_head_attention};
pub(crate) use contextual::{read_mha, write_mha};

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::layout::BlockLayout;

/// Acoustic feature frames `[T x F]` at a fixed frame shift.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f64>,
    pub frame_shift_ms: f64,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f64>, frame_shift_ms: f64) -> Result<Self> {
        if frames.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        if !(frame_shift_ms > 0.0) {
            return Err(Error::Config("frame shift must be positive".into()));
        }
        Ok(Self { frames, frame_shift_ms })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.num_frames() as f64 * self.frame_shift_ms / 1000.0
    }

    /// Parses `T F frame_shift_ms` followed by `T` rows of `F` numbers.
    pub fn parse(text: &str) -> Result<Self> {
        const WHAT: &str = "feature file";
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(WHAT, 1, "missing header `T F frame_shift_ms`"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(WHAT, hline, "header must be `T F frame_shift_ms`"));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(WHAT, hline, "T must be a non-negative integer"))?;
        let f: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(WHAT, hline, "F must be a non-negative integer"))?;
        let shift: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(WHAT, hline, "frame shift must be a number"))?;
        if t == 0 || f == 0 {
            return Err(Error::parse(WHAT, hline, "T and F must be at least 1"));
        }
        if !(shift > 0.0) {
            return Err(Error::parse(WHAT, hline, "frame shift must be positive"));
        }
        let mut data = Vec::with_capacity(t * f);
        let mut rows = 0;
        for (lineno, line) in lines {
            if rows == t {
                return Err(Error::parse(WHAT, lineno, format!("more than {t} frame rows")));
            }
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::parse(WHAT, lineno, format!("bad number `{tok}`")))?,
                );
            }
            if data.len() - before != f {
                return Err(Error::parse(
                    WHAT,
                    lineno,
                    format!("expected {f} values, found {}", data.len() - before),
                ));
            }
            rows += 1;
        }
        if rows != t {
            return Err(Error::parse(WHAT, hline, format!("header declares {t} rows, found {rows}")));
        }
        Self::new(Array2::from_shape_vec((t, f), data).expect("counted"), shift)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.num_frames(), self.dim(), self.frame_shift_ms);
        for row in self.frames.rows() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Algorithmic latency contributed by the block shift: one block center of
/// downsampled frames, in seconds.
///
/// ```
/// use blocksync::{encoder::theoretical_delay, BlockLayout};
/// let layout = BlockLayout::new(16, 16, 8, 4, 10.0).unwrap();
/// assert_eq!(theoretical_delay(&layout), 0.64);
/// ```
pub fn theoretical_delay(layout: &BlockLayout) -> f64 {
    // Integer milliseconds first keeps common layouts exact in binary.
    (layout.n_center * layout.downsample) as f64 * layout.frame_shift_ms / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delay_values() {
        let l = |c, ds| BlockLayout::new(0, c, 0, ds, 10.0).unwrap();
        assert_eq!(theoretical_delay(&l(16, 4)), 0.64);
        assert_eq!(theoretical_delay(&l(8, 4)), 0.32);
        assert_eq!(theoretical_delay(&l(16, 1)), 0.16);
    }

    #[test]
    fn feature_file_round_trip_and_errors() {
        let seq = FeatureSequence::parse("2 3 10\n1 2 3\n4 5 6\n").unwrap();
        assert_eq!(seq.frames[[1, 2]], 6.0);
        assert_eq!(FeatureSequence::parse(&seq.to_text()).unwrap(), seq);
        let err = FeatureSequence::parse("2 3 10\n1 2 3\n4 5\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(FeatureSequence::parse("1 2\n").is_err());
    }
}
