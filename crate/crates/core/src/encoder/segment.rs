use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::layout::BlockLayout;
use crate::nn::Linear;

/// Frame geometry of block `index` (1-based) in downsampled frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpan {
    pub index: usize,
    /// `[start, end)` of the whole block input including context.
    pub start: usize,
    pub end: usize,
    /// `[center_start, center_end)`, the frames this block emits.
    pub center_start: usize,
    pub center_end: usize,
    pub is_last: bool,
}

/// Tiles `[0, len)` with centers of `n_center` frames. Context is cut at the
/// utterance edges, never padded.
pub fn block_spans(len: usize, layout: &BlockLayout) -> Result<Vec<BlockSpan>> {
    layout.validate()?;
    if len == 0 {
        return Err(Error::EmptyInput);
    }
    let count = len.div_ceil(layout.n_center);
    Ok((0..count)
        .map(|i| {
            let center_start = i * layout.n_center;
            let center_end = (center_start + layout.n_center).min(len);
            BlockSpan {
                index: i + 1,
                start: center_start.saturating_sub(layout.n_left),
                end: (center_start + layout.n_center + layout.n_right).min(len),
                center_start,
                center_end,
                is_last: i + 1 == count,
            }
        })
        .collect())
}

/// Encoder input for one block: the downsampled frames of its span.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockInput {
    pub span: BlockSpan,
    /// `[span.end - span.start x F']`.
    pub frames: Array2<f64>,
}

impl BlockInput {
    pub fn index(&self) -> usize {
        self.span.index
    }
}

/// Cuts downsampled frames into block inputs.
pub fn segment_blocks(downsampled: ArrayView2<f64>, layout: &BlockLayout) -> Result<Vec<BlockInput>> {
    Ok(block_spans(downsampled.nrows(), layout)?
        .into_iter()
        .map(|span| BlockInput {
            frames: downsampled.slice(s![span.start..span.end, ..]).to_owned(),
            span,
        })
        .collect())
}

/// Subsampling front end. Each output frame depends only on its own window
/// of `factor` input frames, so downsampling never looks ahead.
#[derive(Debug, Clone, PartialEq)]
pub enum Frontend {
    /// Mean over non-overlapping windows of `factor` frames.
    Average { factor: usize },
    /// Two stride-2, kernel-2 convolutions with ReLU (factor 4). Each
    /// convolution is a linear map of two stacked adjacent frames.
    Conv { conv1: Linear, conv2: Linear },
}

impl Frontend {
    pub fn factor(&self) -> usize {
        match self {
            Frontend::Average { factor } => *factor,
            Frontend::Conv { .. } => 4,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Frontend::Average { .. } => input_dim,
            Frontend::Conv { conv2, .. } => conv2.bias.len(),
        }
    }

    /// `[T x F] -> [floor(T / factor) x F']`.
    pub fn apply(&self, frames: ArrayView2<f64>) -> Result<Array2<f64>> {
        let out = match self {
            Frontend::Average { factor } => {
                let factor = (*factor).max(1);
                let len = frames.nrows() / factor;
                let mut out = Array2::zeros((len, frames.ncols()));
                for (r, mut row) in out.rows_mut().into_iter().enumerate() {
                    let window = frames.slice(s![r * factor..(r + 1) * factor, ..]);
                    row.assign(&window.mean_axis(ndarray::Axis(0)).expect("non-empty window"));
                }
                out
            }
            Frontend::Conv { conv1, conv2 } => {
                let h = stride2(frames, conv1)?;
                stride2(h.view(), conv2)?
            }
        };
        if out.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(out)
    }
}

fn stride2(x: ArrayView2<f64>, conv: &Linear) -> Result<Array2<f64>> {
    let len = x.nrows() / 2;
    let width = x.ncols();
    if conv.weight.nrows() != 2 * width {
        return Err(Error::Shape(format!(
            "convolution expects {} inputs, got 2 x {width}",
            conv.weight.nrows()
        )));
    }
    let mut stacked = Array2::zeros((len, 2 * width));
    for r in 0..len {
        stacked.slice_mut(s![r, ..width]).assign(&x.row(2 * r));
        stacked.slice_mut(s![r, width..]).assign(&x.row(2 * r + 1));
    }
    Ok(conv.forward(stacked.view()).mapv(|v| v.max(0.0)))
}
