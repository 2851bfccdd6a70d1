//! Toy Transformer decoder used as the attention scorer.

use std::sync::Arc;

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};

use super::{BlockCache, Scorer, ScorerState, ScoringContext, StepScores};
use crate::config::ScorerKind;
use crate::encoder::{read_mha, write_mha};
use crate::error::{Error, Result};
use crate::layout::EncodedBlock;
use crate::nn::{multi_head_projected_row, sinusoidal_positions, vec_mat, FeedForward, LayerNorm, Linear, MhaWeights};
use crate::score::log_softmax;
use crate::tensor::TensorMap;
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub self_attn: MhaWeights,
    pub src_attn: MhaWeights,
    pub ffn: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub norm3: LayerNorm,
}

/// Pre-norm decoder: each layer runs masked self-attention over the
/// prefix, source attention over the encoded blocks and a feed-forward
/// network, each with a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    /// `[|V| x d_model]`.
    pub embed: Array2<f64>,
    pub layers: Vec<DecoderLayer>,
    pub norm: LayerNorm,
    /// `d_model -> |V|`.
    pub out: Linear,
}

impl DecoderWeights {
    pub fn d_model(&self) -> usize {
        self.embed.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model();
        for (n, l) in self.layers.iter().enumerate() {
            for (name, w) in [("self_attn", &l.self_attn), ("src_attn", &l.src_attn)] {
                w.validate()?;
                if w.d_model() != d || w.wo.ncols() != d {
                    return Err(Error::Shape(format!("decoder layer {n} {name} width differs from {d}")));
                }
            }
            l.ffn.validate(&format!("decoder.layers.{n}.ffn"), d)?;
            l.norm1.validate("decoder norm1", d)?;
            l.norm2.validate("decoder norm2", d)?;
            l.norm3.validate("decoder norm3", d)?;
        }
        self.norm.validate("decoder.norm", d)?;
        self.out.validate("decoder.out", d, self.vocab_size())
    }

    pub fn from_tensors(t: &TensorMap) -> Result<Self> {
        let heads = t.scalar_usize("decoder.heads")?;
        let linear = |p: &str| -> Result<Linear> {
            Ok(Linear {
                weight: t.matrix(&format!("{p}.weight"))?,
                bias: t.vector(&format!("{p}.bias"))?,
            })
        };
        let norm = |p: &str| -> Result<LayerNorm> {
            Ok(LayerNorm {
                gamma: t.vector(&format!("{p}.gamma"))?,
                beta: t.vector(&format!("{p}.beta"))?,
            })
        };
        let mut layers = Vec::new();
        while t.contains(&format!("decoder.layers.{}.self_attn.wq", layers.len())) {
            let p = format!("decoder.layers.{}", layers.len());
            layers.push(DecoderLayer {
                self_attn: read_mha(t, &format!("{p}.self_attn"), heads)?,
                src_attn: read_mha(t, &format!("{p}.src_attn"), heads)?,
                ffn: FeedForward {
                    w1: linear(&format!("{p}.ffn.w1"))?,
                    w2: linear(&format!("{p}.ffn.w2"))?,
                },
                norm1: norm(&format!("{p}.norm1"))?,
                norm2: norm(&format!("{p}.norm2"))?,
                norm3: norm(&format!("{p}.norm3"))?,
            });
        }
        let w = Self {
            embed: t.matrix("decoder.embed")?,
            layers,
            norm: norm("decoder.norm")?,
            out: linear("decoder.out")?,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn write_tensors(&self, t: &mut TensorMap) {
        let heads = self.layers.first().map_or(1, |l| l.self_attn.heads);
        t.insert("decoder.heads", crate::tensor::Tensor::scalar(heads as f64));
        t.insert_matrix("decoder.embed", &self.embed);
        let norm = |t: &mut TensorMap, p: &str, n: &LayerNorm| {
            t.insert_vector(format!("{p}.gamma"), &n.gamma);
            t.insert_vector(format!("{p}.beta"), &n.beta);
        };
        let linear = |t: &mut TensorMap, p: &str, l: &Linear| {
            t.insert_matrix(format!("{p}.weight"), &l.weight);
            t.insert_vector(format!("{p}.bias"), &l.bias);
        };
        for (n, l) in self.layers.iter().enumerate() {
            let p = format!("decoder.layers.{n}");
            write_mha(t, &format!("{p}.self_attn"), &l.self_attn);
            write_mha(t, &format!("{p}.src_attn"), &l.src_attn);
            linear(t, &format!("{p}.ffn.w1"), &l.ffn.w1);
            linear(t, &format!("{p}.ffn.w2"), &l.ffn.w2);
            norm(t, &format!("{p}.norm1"), &l.norm1);
            norm(t, &format!("{p}.norm2"), &l.norm2);
            norm(t, &format!("{p}.norm3"), &l.norm3);
        }
        norm(t, "decoder.norm", &self.norm);
        linear(t, "decoder.out", &self.out);
    }

    /// Decoder input row for `token` at `position`.
    pub fn input_row(&self, token: TokenId, position: usize) -> Array1<f64> {
        let d = self.d_model();
        let pe = sinusoidal_positions(position, 1, d);
        &self.embed.row(token) * (d as f64).sqrt() + &pe.row(0)
    }
}

/// Source-attention keys and values of every layer over `h_1..h_b`.
struct Memory {
    frames: usize,
    keys: Vec<Array2<f64>>,
    values: Vec<Array2<f64>>,
}

/// Cached self-attention keys and values of the consumed prefix, per layer.
/// Valid only for the number of blocks it was computed with: source
/// attention feeds every layer above the first, so a new block invalidates
/// the whole cache.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub blocks_seen: usize,
    pub tokens: Vec<TokenId>,
    self_keys: Vec<Array2<f64>>,
    self_values: Vec<Array2<f64>>,
}

impl DecoderState {
    fn empty(layers: usize, d: usize, blocks_seen: usize) -> Self {
        Self {
            blocks_seen,
            tokens: Vec::new(),
            self_keys: vec![Array2::zeros((0, d)); layers],
            self_values: vec![Array2::zeros((0, d)); layers],
        }
    }
}

/// Attention-role scorer backed by [`DecoderWeights`].
#[derive(Debug, Clone)]
pub struct AttentionDecoder {
    weights: DecoderWeights,
}

impl AttentionDecoder {
    pub fn new(weights: DecoderWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &DecoderWeights {
        &self.weights
    }

    /// Runs one prefix position through every layer, appending its keys and
    /// values to `state`. The final hidden row is only computed when
    /// `output` is set; otherwise the top layer stops after its keys and
    /// values, which is all later positions read.
    fn advance_position(
        &self,
        state: &mut DecoderState,
        token: TokenId,
        position: usize,
        memory: &Memory,
        output: bool,
    ) -> Result<Option<Array1<f64>>> {
        let layers = self.weights.layers.len();
        let mut x = self.weights.input_row(token, position);
        for (n, layer) in self.weights.layers.iter().enumerate() {
            let h = layer.norm1.forward_row(x.view());
            let k = vec_mat(h.view(), layer.self_attn.wk.view());
            let v = vec_mat(h.view(), layer.self_attn.wv.view());
            state.self_keys[n].push_row(k.view()).expect("width");
            state.self_values[n].push_row(v.view()).expect("width");
            if n + 1 == layers && !output {
                return Ok(None);
            }
            let q = vec_mat(h.view(), layer.self_attn.wq.view());
            x = x + multi_head_projected_row(q.view(), state.self_keys[n].view(), state.self_values[n].view(), &layer.self_attn)?;

            let h = layer.norm2.forward_row(x.view());
            let q = vec_mat(h.view(), layer.src_attn.wq.view());
            x = x + multi_head_projected_row(q.view(), memory.keys[n].view(), memory.values[n].view(), &layer.src_attn)?;

            let h = layer.norm3.forward_row(x.view());
            x = &x + &layer.ffn.forward_row(h.view());
        }
        Ok(Some(x))
    }

    fn output(&self, hidden: ArrayView1<f64>) -> Vec<f64> {
        let h = self.weights.norm.forward(hidden.insert_axis(Axis(0)));
        let logits = self.weights.out.forward_row(h.row(0));
        log_softmax(logits.as_slice().expect("contiguous"))
    }
}

impl Scorer for AttentionDecoder {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Attention
    }

    fn init(&self) -> ScorerState {
        ScorerState::new(Arc::new(DecoderState::empty(self.weights.layers.len(), self.weights.d_model(), 0)))
    }

    fn new_cache(&self) -> BlockCache {
        let d = self.weights.d_model();
        let n = self.weights.layers.len();
        BlockCache::new(Memory {
            frames: 0,
            keys: vec![Array2::zeros((0, d)); n],
            values: vec![Array2::zeros((0, d)); n],
        })
    }

    fn ingest(&self, cache: &mut BlockCache, block: &EncodedBlock) -> Result<()> {
        let mem = cache
            .get_mut::<Memory>()
            .ok_or_else(|| Error::Config("foreign cache given to the attention decoder".into()))?;
        if block.vectors.ncols() != self.weights.d_model() {
            return Err(Error::Shape(format!(
                "encoded block width {} differs from decoder width {}",
                block.vectors.ncols(),
                self.weights.d_model()
            )));
        }
        for (n, layer) in self.weights.layers.iter().enumerate() {
            let k = block.vectors.dot(&layer.src_attn.wk);
            let v = block.vectors.dot(&layer.src_attn.wv);
            mem.keys[n] = concatenate(Axis(0), &[mem.keys[n].view(), k.view()]).expect("width");
            mem.values[n] = concatenate(Axis(0), &[mem.values[n].view(), v.view()]).expect("width");
        }
        mem.frames += block.num_frames();
        Ok(())
    }

    fn score_step(&self, state: &ScorerState, prefix: &[TokenId], ctx: &ScoringContext<'_>) -> Result<StepScores> {
        let prev = state.expect::<Arc<DecoderState>>("attention")?;
        let blocks = ctx.blocks.len();
        if blocks < prev.blocks_seen {
            return Err(Error::NonMonotoneBlocks {
                seen: prev.blocks_seen,
                given: blocks,
            });
        }
        if blocks == 0 {
            return Err(Error::NoBlocks);
        }
        if prefix.is_empty() || !prefix.starts_with(&prev.tokens) {
            return Err(Error::Config("attention state does not belong to this prefix".into()));
        }
        let memory = ctx
            .cache
            .get::<Memory>()
            .ok_or_else(|| Error::Config("foreign cache given to the attention decoder".into()))?;

        let mut next = if prev.blocks_seen == blocks && prev.tokens.len() < prefix.len() {
            (**prev).clone()
        } else {
            DecoderState::empty(self.weights.layers.len(), self.weights.d_model(), blocks)
        };
        let mut hidden = None;
        for pos in next.tokens.len()..prefix.len() {
            hidden = self.advance_position(&mut next, prefix[pos], pos, memory, pos + 1 == prefix.len())?;
            next.tokens.push(prefix[pos]);
        }
        let hidden = hidden.expect("at least one position advanced");
        let log_probs = self.output(hidden.view());
        Ok(StepScores::new(log_probs, Arc::new(next)))
    }

    fn extend(&self, step: &StepScores, _prefix: &[TokenId], _token: TokenId) -> ScorerState {
        let state = step.payload::<Arc<DecoderState>>().expect("payload written by score_step");
        ScorerState::new(Arc::clone(state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ToyDims;
    use crate::nn::multi_head_attention;
    use crate::scorers::{BlockStore, ScorerSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Recomputes the next-token distribution without any cache: every layer
    /// runs over the full prefix with an explicit causal loop.
    fn uncached(w: &DecoderWeights, prefix: &[TokenId], memory: &Array2<f64>) -> Vec<f64> {
        let d = w.d_model();
        let n = prefix.len();
        let mut x = Array2::zeros((n, d));
        for (p, &t) in prefix.iter().enumerate() {
            x.row_mut(p).assign(&w.input_row(t, p));
        }
        for layer in &w.layers {
            let h = layer.norm1.forward(x.view());
            let mut sa = Array2::zeros((n, d));
            for p in 0..n {
                let q = h.slice(ndarray::s![p..p + 1, ..]);
                let kv = h.slice(ndarray::s![..p + 1, ..]);
                sa.row_mut(p).assign(&multi_head_attention(q, kv, kv, &layer.self_attn).unwrap().row(0));
            }
            x = x + sa;
            let h = layer.norm2.forward(x.view());
            x = &x + &multi_head_attention(h.view(), memory.view(), memory.view(), &layer.src_attn).unwrap();
            let h = layer.norm3.forward(x.view());
            x = &x + &layer.ffn.forward(h.view());
        }
        let h = w.norm.forward(x.view());
        let logits = w.out.forward_row(h.row(n - 1));
        log_softmax(logits.as_slice().unwrap())
    }

    fn setup(seed: u64) -> (AttentionDecoder, Vec<EncodedBlock>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = ToyDims { vocab: 7, ..ToyDims::default() };
        let dec = AttentionDecoder::new(DecoderWeights::random(&mut rng, &dims)).unwrap();
        let blocks = (0..3)
            .map(|b| {
                let v = crate::model::random_matrix(&mut rng, 4, dims.d_model, 1.0);
                EncodedBlock { index: b + 1, vectors: v, frame_start: 4 * b, frame_end: 4 * b + 4, is_last: b == 2 }
            })
            .collect();
        (dec, blocks)
    }

    #[test]
    fn uniform_output_projection_gives_uniform_distribution() {
        let (mut dec, blocks) = setup(1);
        dec.weights.out = Linear::zeros(dec.weights.d_model(), 7);
        let set = ScorerSet::new(Arc::new(dec.clone())).unwrap();
        let mut store = BlockStore::new(&set);
        store.push(&set, blocks[0].clone()).unwrap();
        let step = dec.score_step(&dec.init(), &[1], &store.context(ScorerKind::Attention)).unwrap();
        for lp in step.log_probs {
            assert!((lp + (7f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn cached_steps_match_uncached_recomputation() {
        let (dec, blocks) = setup(2);
        let set = ScorerSet::new(Arc::new(dec.clone())).unwrap();
        let mut store = BlockStore::new(&set);
        let prefix = [1usize, 3, 4, 2, 6];
        let mut state = dec.init();
        let mut pushed = 0;
        for i in 1..=prefix.len() {
            // A new block arrives every other step.
            if pushed < blocks.len() && (i % 2 == 1) {
                store.push(&set, blocks[pushed].clone()).unwrap();
                pushed += 1;
            }
            let ctx = store.context(ScorerKind::Attention);
            let step = dec.score_step(&state, &prefix[..i], &ctx).unwrap();
            let memory = crate::layout::concat_blocks(store.blocks());
            let oracle = uncached(dec.weights(), &prefix[..i], &memory);
            for (a, b) in step.log_probs.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9, "step {i}: {a} vs {b}");
            }
            let total: f64 = step.log_probs.iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-6);
            if i < prefix.len() {
                state = dec.extend(&step, &prefix[..i], prefix[i]);
            }
        }
    }

    #[test]
    fn later_tokens_do_not_change_earlier_distributions() {
        let (dec, blocks) = setup(3);
        let memory = crate::layout::concat_blocks(&blocks[..1]);
        let a = uncached(dec.weights(), &[1, 3, 4], &memory);
        let b = uncached(dec.weights(), &[1, 3, 4, 5], &memory);
        let c = uncached(dec.weights(), &[1, 3, 4, 6], &memory);
        assert_ne!(b, c);
        // The distribution at step 3 is computed from positions 0..3 only.
        let set = ScorerSet::new(Arc::new(dec.clone())).unwrap();
        let mut store = BlockStore::new(&set);
        store.push(&set, blocks[0].clone()).unwrap();
        let ctx = store.context(ScorerKind::Attention);
        let s3 = dec.score_step(&dec.init(), &[1, 3, 4], &ctx).unwrap();
        assert_eq!(s3.log_probs.len(), a.len());
        for (x, y) in s3.log_probs.iter().zip(&a) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn shrinking_block_list_is_rejected() {
        let (dec, blocks) = setup(4);
        let set = ScorerSet::new(Arc::new(dec.clone())).unwrap();
        let mut big = BlockStore::new(&set);
        big.push(&set, blocks[0].clone()).unwrap();
        big.push(&set, blocks[1].clone()).unwrap();
        let step = dec.score_step(&dec.init(), &[1], &big.context(ScorerKind::Attention)).unwrap();
        let state = dec.extend(&step, &[1], 3);
        let mut small = BlockStore::new(&set);
        small.push(&set, blocks[0].clone()).unwrap();
        let err = dec.score_step(&state, &[1, 3], &small.context(ScorerKind::Attention)).unwrap_err();
        assert!(err.to_string().contains("non-monotone block stream"), "{err}");
    }
}
