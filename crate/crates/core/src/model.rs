//! Randomly initialized toy models and their on-disk bundle.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::encoder::{EncoderLayer, EncoderWeights};
use crate::error::{Error, Result};
use crate::nn::{FeedForward, LayerNorm, Linear, MhaWeights};
use crate::scorers::{AttentionDecoder, BigramLm, CtcPosteriors, CtcScorer, DecoderLayer, DecoderWeights, ScorerSet};
use crate::tensor::TensorMap;
use crate::vocab::Vocabulary;

/// Sizes of a toy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyDims {
    /// Vocabulary size, blank and start/end included.
    pub vocab: usize,
    pub feature_dim: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Convolutional front end instead of strided averaging.
    pub conv: bool,
}

impl Default for ToyDims {
    fn default() -> Self {
        Self {
            vocab: 12,
            feature_dim: 8,
            d_model: 16,
            d_ff: 32,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 1,
            conv: false,
        }
    }
}

/// `rows x cols` matrix with entries uniform in `[-scale, scale]`.
pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..=scale))
}

fn random_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.gen_range(-scale..=scale))
}

fn random_linear<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Linear {
    let scale = 1.0 / (input as f64).sqrt();
    Linear {
        weight: random_matrix(rng, input, output, scale),
        bias: random_vector(rng, output, 0.1),
    }
}

fn random_mha<R: Rng + ?Sized>(rng: &mut R, d: usize, heads: usize) -> MhaWeights {
    let scale = 1.0 / (d as f64).sqrt();
    MhaWeights {
        heads,
        wq: random_matrix(rng, d, d, scale),
        wk: random_matrix(rng, d, d, scale),
        wv: random_matrix(rng, d, d, scale),
        wo: random_matrix(rng, d, d, scale),
    }
}

fn random_ffn<R: Rng + ?Sized>(rng: &mut R, d: usize, d_ff: usize) -> FeedForward {
    FeedForward {
        w1: random_linear(rng, d, d_ff),
        w2: random_linear(rng, d_ff, d),
    }
}

fn random_norm<R: Rng + ?Sized>(rng: &mut R, d: usize) -> LayerNorm {
    LayerNorm {
        gamma: random_vector(rng, d, 0.1).mapv(|g| 1.0 + g),
        beta: random_vector(rng, d, 0.1),
    }
}

impl EncoderWeights {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dims: &ToyDims) -> Self {
        let d = dims.d_model;
        let conv = dims.conv.then(|| {
            let f = dims.feature_dim;
            (random_linear(rng, 2 * f, f), random_linear(rng, 2 * f, f))
        });
        Self {
            conv,
            input: random_linear(rng, dims.feature_dim, d),
            layers: (0..dims.encoder_layers)
                .map(|_| EncoderLayer {
                    attn: random_mha(rng, d, dims.heads),
                    ffn: random_ffn(rng, d, dims.d_ff),
                })
                .collect(),
            norm: random_norm(rng, d),
        }
    }
}

impl DecoderWeights {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dims: &ToyDims) -> Self {
        let d = dims.d_model;
        Self {
            embed: random_matrix(rng, dims.vocab, d, 1.0 / d as f64),
            layers: (0..dims.decoder_layers)
                .map(|_| DecoderLayer {
                    self_attn: random_mha(rng, d, dims.heads),
                    src_attn: random_mha(rng, d, dims.heads),
                    ffn: random_ffn(rng, d, dims.d_ff),
                    norm1: random_norm(rng, d),
                    norm2: random_norm(rng, d),
                    norm3: random_norm(rng, d),
                })
                .collect(),
            norm: random_norm(rng, d),
            out: random_linear(rng, d, dims.vocab),
        }
    }
}

/// Everything a decode needs besides the vocabulary and block layout:
/// encoder, attention decoder, CTC projection and an optional bigram LM.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub encoder: EncoderWeights,
    pub decoder: DecoderWeights,
    pub ctc: Linear,
    pub lm: Option<BigramLm>,
}

impl ToyModel {
    /// A random model over `vocab`, with a random bigram LM.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dims: &ToyDims, vocab: &Vocabulary) -> Result<Self> {
        if dims.vocab != vocab.len() {
            return Err(Error::Shape(format!(
                "dims say {} tokens, vocabulary has {}",
                dims.vocab,
                vocab.len()
            )));
        }
        let encoder = EncoderWeights::random(rng, dims);
        let decoder = DecoderWeights::random(rng, dims);
        let ctc = random_linear(rng, dims.d_model, dims.vocab);
        let v = vocab.len();
        let mut probs = random_matrix(rng, v, v, 2.0).mapv(f64::exp);
        for mut row in probs.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let lm = Some(BigramLm::new(probs, vocab)?);
        Ok(Self { encoder, decoder, ctc, lm })
    }

    pub fn from_tensors(t: &TensorMap, vocab: &Vocabulary) -> Result<Self> {
        let encoder = EncoderWeights::from_tensors(t)?;
        let decoder = DecoderWeights::from_tensors(t)?;
        let ctc = Linear {
            weight: t.matrix("ctc.weight")?,
            bias: t.vector("ctc.bias")?,
        };
        let lm = if t.contains("lm.bigram") {
            Some(BigramLm::from_tensors(t, vocab)?)
        } else {
            None
        };
        let model = Self { encoder, decoder, ctc, lm };
        model.validate(vocab)?;
        Ok(model)
    }

    pub fn to_tensors(&self) -> TensorMap {
        let mut t = TensorMap::new();
        self.encoder.write_tensors(&mut t);
        self.decoder.write_tensors(&mut t);
        t.insert_matrix("ctc.weight", &self.ctc.weight);
        t.insert_vector("ctc.bias", &self.ctc.bias);
        if let Some(lm) = &self.lm {
            lm.write_tensors(&mut t);
        }
        t
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self> {
        Self::from_tensors(&TensorMap::load(path)?, vocab)
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        let d = self.encoder.d_model();
        if self.decoder.d_model() != d {
            return Err(Error::Shape(format!(
                "encoder width {d}, decoder width {}",
                self.decoder.d_model()
            )));
        }
        if self.decoder.vocab_size() != vocab.len() {
            return Err(Error::Shape(format!(
                "decoder has {} outputs, vocabulary has {}",
                self.decoder.vocab_size(),
                vocab.len()
            )));
        }
        self.ctc.validate("ctc", d, vocab.len())
    }

    /// Attention decoder, CTC scorer and (if present) the LM.
    pub fn scorers(&self, vocab: &Vocabulary) -> Result<ScorerSet> {
        let set = ScorerSet::new(Arc::new(AttentionDecoder::new(self.decoder.clone())?))?
            .with(Arc::new(CtcScorer::new(vocab, CtcPosteriors::Projection(self.ctc.clone()))?))?;
        match &self.lm {
            Some(lm) => set.with(Arc::new(lm.clone())),
            None => Ok(set),
        }
    }
}
