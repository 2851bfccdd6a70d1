use ndarray::{concatenate, s, Array1, Array2, Axis};

use super::segment::{segment_blocks, BlockInput, Frontend};
use super::FeatureSequence;
use crate::error::{Error, Result};
use crate::layout::{BlockLayout, EncodedBlock};
use crate::nn::{all_finite, multi_head_attention, sinusoidal_positions, FeedForward, LayerNorm, Linear, MhaWeights};
use crate::tensor::TensorMap;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn: MhaWeights,
    pub ffn: FeedForward,
}

/// Parameters of the toy contextual block encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    /// Two stride-2 convolutions; `None` selects strided averaging.
    pub conv: Option<(Linear, Linear)>,
    pub input: Linear,
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

impl EncoderWeights {
    pub fn d_model(&self) -> usize {
        self.input.bias.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Width of the frames entering the input projection.
    pub fn frontend_dim(&self) -> usize {
        self.input.weight.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model();
        if self.layers.is_empty() {
            return Err(Error::Shape("encoder needs at least one layer".into()));
        }
        for (n, layer) in self.layers.iter().enumerate() {
            layer.attn.validate()?;
            if layer.attn.d_model() != d || layer.attn.wo.ncols() != d {
                return Err(Error::Shape(format!("encoder layer {n} attention width differs from {d}")));
            }
            layer.ffn.validate(&format!("encoder.layers.{n}.ffn"), d)?;
        }
        self.norm.validate("encoder.norm", d)?;
        if let Some((c1, c2)) = &self.conv {
            if c2.weight.nrows() != 2 * c1.bias.len() {
                return Err(Error::Shape("conv2 input must be twice conv1 output".into()));
            }
            if c2.bias.len() != self.frontend_dim() {
                return Err(Error::Shape("conv2 output must match the input projection".into()));
            }
        }
        Ok(())
    }

    /// Every parameter zero, including the final layer-norm gain.
    pub fn zeros(feature_dim: usize, d_model: usize, d_ff: usize, heads: usize, layers: usize) -> Self {
        Self {
            conv: None,
            input: Linear::zeros(feature_dim, d_model),
            layers: (0..layers)
                .map(|_| EncoderLayer {
                    attn: MhaWeights::zeros(d_model, heads),
                    ffn: FeedForward::zeros(d_model, d_ff),
                })
                .collect(),
            norm: LayerNorm {
                gamma: Array1::zeros(d_model),
                beta: Array1::zeros(d_model),
            },
        }
    }

    pub fn from_tensors(t: &TensorMap) -> Result<Self> {
        let heads = t.scalar_usize("encoder.heads")?;
        let linear = |p: &str| -> Result<Linear> {
            Ok(Linear {
                weight: t.matrix(&format!("{p}.weight"))?,
                bias: t.vector(&format!("{p}.bias"))?,
            })
        };
        let conv = if t.contains("frontend.conv1.weight") {
            Some((linear("frontend.conv1")?, linear("frontend.conv2")?))
        } else {
            None
        };
        let mut layers = Vec::new();
        while t.contains(&format!("encoder.layers.{}.attn.wq", layers.len())) {
            let p = format!("encoder.layers.{}", layers.len());
            layers.push(EncoderLayer {
                attn: read_mha(t, &format!("{p}.attn"), heads)?,
                ffn: FeedForward {
                    w1: linear(&format!("{p}.ffn.w1"))?,
                    w2: linear(&format!("{p}.ffn.w2"))?,
                },
            });
        }
        let w = Self {
            conv,
            input: linear("encoder.input")?,
            layers,
            norm: LayerNorm {
                gamma: t.vector("encoder.norm.gamma")?,
                beta: t.vector("encoder.norm.beta")?,
            },
        };
        w.validate()?;
        Ok(w)
    }

    pub fn write_tensors(&self, t: &mut TensorMap) {
        let heads = self.layers.first().map_or(1, |l| l.attn.heads);
        t.insert("encoder.heads", crate::tensor::Tensor::scalar(heads as f64));
        let linear = |t: &mut TensorMap, p: &str, l: &Linear| {
            t.insert_matrix(format!("{p}.weight"), &l.weight);
            t.insert_vector(format!("{p}.bias"), &l.bias);
        };
        if let Some((c1, c2)) = &self.conv {
            linear(t, "frontend.conv1", c1);
            linear(t, "frontend.conv2", c2);
        }
        linear(t, "encoder.input", &self.input);
        for (n, layer) in self.layers.iter().enumerate() {
            let p = format!("encoder.layers.{n}");
            write_mha(t, &format!("{p}.attn"), &layer.attn);
            linear(t, &format!("{p}.ffn.w1"), &layer.ffn.w1);
            linear(t, &format!("{p}.ffn.w2"), &layer.ffn.w2);
        }
        t.insert_vector("encoder.norm.gamma", &self.norm.gamma);
        t.insert_vector("encoder.norm.beta", &self.norm.beta);
    }
}

pub(crate) fn read_mha(t: &TensorMap, prefix: &str, heads: usize) -> Result<MhaWeights> {
    Ok(MhaWeights {
        heads,
        wq: t.matrix(&format!("{prefix}.wq"))?,
        wk: t.matrix(&format!("{prefix}.wk"))?,
        wv: t.matrix(&format!("{prefix}.wv"))?,
        wo: t.matrix(&format!("{prefix}.wo"))?,
    })
}

pub(crate) fn write_mha(t: &mut TensorMap, prefix: &str, w: &MhaWeights) {
    t.insert_matrix(format!("{prefix}.wq"), &w.wq);
    t.insert_matrix(format!("{prefix}.wk"), &w.wk);
    t.insert_matrix(format!("{prefix}.wv"), &w.wv);
    t.insert_matrix(format!("{prefix}.wo"), &w.wo);
}

/// Context embeddings carried from one block to the next: row `n` is the
/// context vector entering layer `n + 1` of the following block.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextState {
    pub vectors: Array2<f64>,
}

impl ContextState {
    /// The state before the first block.
    pub fn zeros(num_layers: usize, d_model: usize) -> Self {
        Self {
            vectors: Array2::zeros((num_layers, d_model)),
        }
    }

    pub fn for_weights(w: &EncoderWeights) -> Self {
        Self::zeros(w.num_layers(), w.d_model())
    }
}

/// Encodes one block given the context handed over by the previous block.
///
/// Layer `n` attends with queries `[Z; c_b]` over keys and values
/// `[Z; c_{b-1}]`, where `c_b` is this block's context vector from the layer
/// below and `c_{b-1}` the previous block's. The block's initial context
/// vector is the mean of its projected input frames. The extra output row
/// becomes this block's context vector for the next layer.
pub fn encode_block(
    block: &BlockInput,
    ctx: &ContextState,
    weights: &EncoderWeights,
) -> Result<(EncodedBlock, ContextState)> {
    let d = weights.d_model();
    if ctx.vectors.dim() != (weights.num_layers(), d) {
        return Err(Error::Shape(format!(
            "context state {:?} does not match {} layers of width {d}",
            ctx.vectors.dim(),
            weights.num_layers()
        )));
    }
    if block.frames.ncols() != weights.frontend_dim() {
        return Err(Error::Shape(format!(
            "block frames have width {}, encoder expects {}",
            block.frames.ncols(),
            weights.frontend_dim()
        )));
    }
    let span = block.span;
    let rows = span.end - span.start;
    if rows == 0 || block.frames.nrows() != rows {
        return Err(Error::EmptyInput);
    }

    let mut z = weights.input.forward(block.frames.view()) + sinusoidal_positions(span.start, rows, d);
    let mut c_cur: Array1<f64> = z.mean_axis(Axis(0)).expect("non-empty block");
    let mut next = ContextState::for_weights(weights);

    for (n, layer) in weights.layers.iter().enumerate() {
        next.vectors.row_mut(n).assign(&c_cur);
        let c_prev = ctx.vectors.row(n);
        let q = concatenate(Axis(0), &[z.view(), c_cur.view().insert_axis(Axis(0))]).expect("same width");
        let kv = concatenate(Axis(0), &[z.view(), c_prev.insert_axis(Axis(0))]).expect("same width");
        let inter = multi_head_attention(q.view(), kv.view(), kv.view(), &layer.attn)? + &kv;
        let out = layer.ffn.forward(inter.view()) + &inter;
        if !all_finite(&out) {
            return Err(Error::EncoderOverflow);
        }
        c_cur = out.row(rows).to_owned();
        z = out.slice(s![..rows, ..]).to_owned();
    }

    let normed = weights.norm.forward(z.view());
    let center = normed
        .slice(s![span.center_start - span.start..span.center_end - span.start, ..])
        .to_owned();
    if !all_finite(&center) {
        return Err(Error::EncoderOverflow);
    }
    Ok((
        EncodedBlock {
            index: span.index,
            vectors: center,
            frame_start: span.center_start,
            frame_end: span.center_end,
            is_last: span.is_last,
        },
        next,
    ))
}

/// Front end, segmentation and block encoding bundled for one layout.
#[derive(Debug, Clone)]
pub struct ContextualBlockEncoder {
    pub weights: EncoderWeights,
    pub layout: BlockLayout,
    frontend: Frontend,
}

impl ContextualBlockEncoder {
    pub fn new(weights: EncoderWeights, layout: BlockLayout) -> Result<Self> {
        weights.validate()?;
        layout.validate()?;
        let frontend = match &weights.conv {
            Some((c1, c2)) => {
                if layout.downsample != 4 {
                    return Err(Error::Config(format!(
                        "convolutional front end downsamples by 4, layout says {}",
                        layout.downsample
                    )));
                }
                Frontend::Conv {
                    conv1: c1.clone(),
                    conv2: c2.clone(),
                }
            }
            None => Frontend::Average {
                factor: layout.downsample,
            },
        };
        Ok(Self {
            weights,
            layout,
            frontend,
        })
    }

    pub fn frontend(&self) -> &Frontend {
        &self.frontend
    }

    /// Downsamples and segments a whole feature sequence.
    pub fn block_inputs(&self, seq: &FeatureSequence) -> Result<Vec<BlockInput>> {
        let ds = self.frontend.apply(seq.frames.view())?;
        segment_blocks(ds.view(), &self.layout)
    }

    pub fn initial_context(&self) -> ContextState {
        ContextState::for_weights(&self.weights)
    }

    pub fn encode_block(&self, block: &BlockInput, ctx: &ContextState) -> Result<(EncodedBlock, ContextState)> {
        encode_block(block, ctx, &self.weights)
    }

    /// Encodes every block of an utterance in order.
    pub fn encode(&self, seq: &FeatureSequence) -> Result<Vec<EncodedBlock>> {
        let mut ctx = self.initial_context();
        let mut out = Vec::new();
        for block in self.block_inputs(seq)? {
            let (enc, next) = self.encode_block(&block, &ctx)?;
            out.push(enc);
            ctx = next;
        }
        Ok(out)
    }
}
