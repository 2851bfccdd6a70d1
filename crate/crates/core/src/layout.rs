//! Block geometry and encoder output blocks.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Left/center/right frame counts of a block (in downsampled frames), the
/// subsampling factor of the front end, and the input frame shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockLayout {
    pub n_left: usize,
    pub n_center: usize,
    pub n_right: usize,
    pub downsample: usize,
    pub frame_shift_ms: f64,
}

impl BlockLayout {
    pub fn new(n_left: usize, n_center: usize, n_right: usize, downsample: usize, frame_shift_ms: f64) -> Result<Self> {
        let layout = Self {
            n_left,
            n_center,
            n_right,
            downsample,
            frame_shift_ms,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_center == 0 {
            return Err(Error::Config("block center must hold at least one frame".into()));
        }
        if self.downsample == 0 {
            return Err(Error::Config("downsample factor must be at least 1".into()));
        }
        if !(self.frame_shift_ms > 0.0) || !self.frame_shift_ms.is_finite() {
            return Err(Error::Config("frame shift must be positive".into()));
        }
        Ok(())
    }

    /// Seconds covered by one downsampled frame.
    pub fn downsampled_frame_seconds(&self) -> f64 {
        self.downsample as f64 * self.frame_shift_ms / 1000.0
    }
}

/// One encoder output block: the encoded center frames of block `index`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBlock {
    /// 1-based block number.
    pub index: usize,
    /// `[frames x d_model]`.
    pub vectors: Array2<f64>,
    /// Downsampled frame range `[frame_start, frame_end)` of the center.
    pub frame_start: usize,
    pub frame_end: usize,
    pub is_last: bool,
}

impl EncodedBlock {
    pub fn num_frames(&self) -> usize {
        self.frame_end - self.frame_start
    }

    /// A block carrying `frames` zero vectors of width one. Useful for
    /// scorers that ignore the acoustic content.
    pub fn placeholder(index: usize, frame_start: usize, frames: usize, is_last: bool) -> Self {
        Self {
            index,
            vectors: Array2::zeros((frames, 1)),
            frame_start,
            frame_end: frame_start + frames,
            is_last,
        }
    }
}

/// Stacks the vectors of several blocks into one `[frames x d]` matrix.
pub fn concat_blocks(blocks: &[EncodedBlock]) -> Array2<f64> {
    let views: Vec<_> = blocks.iter().map(|b| b.vectors.view()).collect();
    if views.is_empty() {
        return Array2::zeros((0, 0));
    }
    ndarray::concatenate(ndarray::Axis(0), &views).expect("blocks share a model width")
}
