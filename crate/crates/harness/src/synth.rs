//! Fixed-seed synthetic inputs and toy models.
//!
//! A randomly initialised model never prefers the end token and has no
//! notion of how much input it has seen, so its output length tracks the
//! length cap instead of the input. [`AlignedToy`] builds the same
//! architecture with structured weights: features are generated from a
//! hidden label sequence, the encoder passes them through almost unchanged
//! and the CTC head reads the label of each frame. Decoding such inputs
//! behaves like a trained recognizer as far as lengths and boundary timing
//! go, which is what the latency measurements need.

use std::path::Path;

use blocksync::nn::{LayerNorm, Linear};
use blocksync::{FeatureSequence, ToyDims, ToyModel, Vocabulary};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

pub const MIN_SECONDS: f64 = 1.0;
pub const MAX_SECONDS: f64 = 15.0;

/// Labels of the toy vocabulary: `<blank>`, `<sos/eos>` and `t0 .. t{n-3}`.
pub fn toy_vocab(size: usize) -> Vocabulary {
    let labels: Vec<String> = (0..size.saturating_sub(2)).map(|i| format!("t{i}")).collect();
    Vocabulary::with_labels(&labels).expect("generated labels are distinct")
}

/// A randomly initialised model over [`toy_vocab`].
pub fn toy_model(seed: u64, dims: &ToyDims) -> (ToyModel, Vocabulary) {
    let vocab = toy_vocab(dims.vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ToyModel::random(&mut rng, dims, &vocab).expect("dims match the generated vocabulary");
    (model, vocab)
}

/// A smooth random walk of `seconds` length, one frame per `shift_ms`.
pub fn synthetic_features<R: Rng + ?Sized>(rng: &mut R, seconds: f64, dim: usize, shift_ms: f64) -> FeatureSequence {
    let frames = ((seconds * 1000.0 / shift_ms).round() as usize).max(1);
    let mut data = Array2::zeros((frames, dim));
    let mut x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for mut row in data.rows_mut() {
        for (v, out) in x.iter_mut().zip(row.iter_mut()) {
            *v = 0.9 * *v + 0.3 * rng.gen_range(-1.0..1.0);
            *out = *v;
        }
    }
    FeatureSequence::new(data, shift_ms).expect("frames and dim are positive")
}

/// Structured toy model over `labels` tokens; see the module docs.
#[derive(Debug, Clone)]
pub struct AlignedToy {
    pub model: ToyModel,
    pub vocab: Vocabulary,
    pub dims: ToyDims,
    /// Row 0 is the blank prototype, row `l + 1` the prototype of label `l`.
    pub prototypes: Array2<f64>,
    /// Input frames per encoder frame.
    pub downsample: usize,
}

/// Most labels [`AlignedToy::new`] supports.
pub const MAX_ALIGNED_LABELS: usize = 125;

const INPUT_GAIN: f64 = 6.0;
const CTC_SHARPNESS: f64 = 12.0;
const FEATURE_NOISE: f64 = 0.3;
/// Decoder penalty for re-emitting a token, at prefix length one. It falls
/// off with the square root of the number of tokens emitted.
const REPEAT_PENALTY: f64 = 16.0;

/// Model width with room for the blank and label prototypes plus one spare
/// direction in the zero-mean subspace.
fn aligned_width(labels: usize) -> usize {
    (labels + 3).div_ceil(4).max(4) * 4
}

/// `count` zero-mean, mutually orthogonal vectors of squared norm `d`.
fn orthogonal_basis<R: Rng + ?Sized>(rng: &mut R, d: usize, count: usize) -> Array2<f64> {
    assert!(count < d, "only {} zero-mean directions in width {d}", d - 1);
    let mut basis: Vec<Array1<f64>> = vec![Array1::from_elem(d, 1.0 / (d as f64).sqrt())];
    while basis.len() <= count {
        let mut v: Array1<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in &basis {
            let p = v.dot(b);
            v.scaled_add(-p, b);
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            basis.push(v / n);
        }
    }
    let scale = (d as f64).sqrt();
    let mut out = Array2::zeros((count, d));
    for (row, b) in out.rows_mut().into_iter().zip(&basis[1..]) {
        let mut row = row;
        row.assign(&(b * scale));
    }
    out
}

impl AlignedToy {
    pub fn new(seed: u64, labels: usize) -> Self {
        assert!(
            (1..=MAX_ALIGNED_LABELS).contains(&labels),
            "aligned toy supports 1..={MAX_ALIGNED_LABELS} labels"
        );
        let vocab = toy_vocab(labels + 2);
        let width = aligned_width(labels);
        let dims = ToyDims {
            vocab: vocab.len(),
            feature_dim: width,
            d_model: width,
            d_ff: 2 * width,
            ..ToyDims::default()
        };
        let d = dims.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = ToyModel::random(&mut rng, &dims, &vocab).expect("dims match");
        model.lm = None;

        // Rows 0..=labels: blank and label prototypes; the last row is the
        // start token's direction in the decoder.
        let basis = orthogonal_basis(&mut rng, d, labels + 2);
        let prototypes = basis.slice(ndarray::s![..labels + 1, ..]).to_owned();
        let sos_dir = basis.row(labels + 1).to_owned();

        model.encoder.input = Linear {
            weight: Array2::eye(d) * INPUT_GAIN,
            bias: Array1::zeros(d),
        };
        for layer in &mut model.encoder.layers {
            layer.attn.wo *= 0.05;
            layer.ffn.w2.weight *= 0.05;
            layer.ffn.w2.bias *= 0.05;
        }
        model.encoder.norm = LayerNorm::identity(d);

        // Normalised encoder frames have squared norm `d`, so a prototype
        // match scores about `CTC_SHARPNESS` and an orthogonal one about 0.
        let mut ctc = Linear::zeros(d, vocab.len());
        let unit = CTC_SHARPNESS / d as f64;
        for (row, token) in std::iter::once(vocab.blank_id()).chain(2..vocab.len()).enumerate() {
            ctc.weight.column_mut(token).assign(&(&prototypes.row(row) * unit));
        }
        ctc.bias[vocab.sos_eos_id()] = -2.0 * CTC_SHARPNESS;
        model.ctc = ctc;

        // Decoder: uniform self-attention averages the normalised token
        // embeddings of the prefix into a bag of tokens that dominates the
        // final hidden state; the output layer turns membership in the bag
        // into a penalty. Source attention and feed-forward are switched off.
        let dec = &mut model.decoder;
        let sqrt_d = (d as f64).sqrt();
        dec.embed.fill(0.0);
        for token in 2..vocab.len() {
            dec.embed.row_mut(token).assign(&(&prototypes.row(token - 1) * (4.0 / sqrt_d)));
        }
        dec.embed.row_mut(vocab.sos_eos_id()).assign(&(&sos_dir * (4.0 / sqrt_d)));
        for layer in &mut dec.layers {
            layer.self_attn.wq.fill(0.0);
            layer.self_attn.wk.fill(0.0);
            layer.self_attn.wv = Array2::eye(d);
            layer.self_attn.wo = Array2::eye(d) * 20.0;
            layer.src_attn.wo.fill(0.0);
            layer.ffn.w1.weight.fill(0.0);
            layer.ffn.w1.bias.fill(0.0);
            layer.ffn.w2.weight.fill(0.0);
            layer.ffn.w2.bias.fill(0.0);
            for n in [&mut layer.norm1, &mut layer.norm2, &mut layer.norm3] {
                *n = LayerNorm::identity(d);
            }
        }
        dec.norm = LayerNorm::identity(d);
        let mut out = Linear::zeros(d, vocab.len());
        for token in 2..vocab.len() {
            out.weight
                .column_mut(token)
                .assign(&(&prototypes.row(token - 1) * (-REPEAT_PENALTY / d as f64)));
        }
        dec.out = out;

        Self {
            model,
            vocab,
            dims,
            prototypes,
            downsample: 4,
        }
    }

    /// Features for roughly `seconds` of input and the label sequence they
    /// encode. Each label holds for one or two encoder frames, separated by
    /// one to four blank frames. Labels are drawn without replacement until
    /// the inventory runs out, so repeats only appear in long utterances.
    pub fn utterance<R: Rng + ?Sized>(&self, rng: &mut R, seconds: f64, shift_ms: f64) -> (FeatureSequence, Vec<String>) {
        let ds = self.downsample;
        let units = ((seconds * 1000.0 / shift_ms) as usize / ds).max(1);
        let labels = self.prototypes.nrows() - 1;
        let mut plan: Vec<usize> = Vec::with_capacity(units);
        let mut reference = Vec::new();
        let mut pool: Vec<usize> = Vec::new();
        let mut last = None;
        while plan.len() < units {
            let gap = rng.gen_range(1..=4).min(units - plan.len());
            plan.extend(std::iter::repeat(0).take(gap));
            if plan.len() + 2 > units {
                plan.resize(units, 0);
                break;
            }
            if pool.is_empty() {
                pool = (0..labels).collect();
                pool.shuffle(rng);
                // Labels are popped from the back; keep a refill from
                // repeating the label just emitted.
                if pool.len() > 1 && pool.last() == last.as_ref() {
                    let n = pool.len();
                    pool.swap(0, n - 1);
                }
            }
            let l = pool.pop().expect("refilled above");
            last = Some(l);
            reference.push(self.vocab.token(l + 2).expect("label in vocabulary").to_string());
            let hold = rng.gen_range(1..=2).min(units - plan.len() - 1);
            plan.extend(std::iter::repeat(l + 1).take(hold));
        }
        let d = self.dims.feature_dim;
        let mut frames = Array2::zeros((units * ds, d));
        for (u, &p) in plan.iter().enumerate() {
            for k in 0..ds {
                let mut row = frames.row_mut(u * ds + k);
                for (x, &c) in row.iter_mut().zip(self.prototypes.row(p)) {
                    *x = c + FEATURE_NOISE * rng.gen_range(-1.0..1.0);
                }
            }
        }
        (FeatureSequence::new(frames, shift_ms).expect("non-empty"), reference)
    }
}

pub struct SynthUtterance {
    pub id: String,
    pub features: FeatureSequence,
    pub reference: Vec<String>,
}

/// `count` aligned utterances with lengths drawn uniformly from
/// `[MIN_SECONDS, MAX_SECONDS]`.
pub fn synthetic_corpus(toy: &AlignedToy, seed: u64, count: usize) -> Vec<SynthUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let secs = rng.gen_range(MIN_SECONDS..=MAX_SECONDS);
            let (features, reference) = toy.utterance(&mut rng, secs, 10.0);
            SynthUtterance {
                id: format!("synth-{i:04}"),
                features,
                reference,
            }
        })
        .collect()
}

/// Writes `model.txt`, `vocab.txt`, `feats/*.txt` and `manifest.tsv` with
/// references for an aligned toy over `labels` tokens.
pub fn write_corpus(dir: &Path, seed: u64, count: usize, labels: usize) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    let feats = dir.join("feats");
    std::fs::create_dir_all(&feats).map_err(io(&feats))?;
    let toy = AlignedToy::new(seed, labels);
    let p = dir.join("model.txt");
    std::fs::write(&p, toy.model.to_tensors().to_text()).map_err(io(&p))?;
    let p = dir.join("vocab.txt");
    std::fs::write(&p, toy.vocab.to_file_string()).map_err(io(&p))?;
    let mut manifest = String::new();
    for u in synthetic_corpus(&toy, seed, count) {
        let p = feats.join(format!("{}.txt", u.id));
        std::fs::write(&p, u.features.to_text()).map_err(io(&p))?;
        manifest.push_str(&format!("{0}\tfeats/{0}.txt\t{1}\n", u.id, u.reference.join(" ")));
    }
    let p = dir.join("manifest.tsv");
    std::fs::write(&p, manifest).map_err(io(&p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthogonal_and_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = orthogonal_basis(&mut rng, 16, 15);
        for i in 0..15 {
            assert!(p.row(i).sum().abs() < 1e-9);
            assert!((p.row(i).dot(&p.row(i)) - 16.0).abs() < 1e-9);
            for j in 0..i {
                assert!(p.row(i).dot(&p.row(j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn width_fits_the_labels() {
        for labels in 1..=MAX_ALIGNED_LABELS {
            let d = aligned_width(labels);
            assert!(labels + 2 < d && d % 4 == 0 && d >= 16, "{labels} -> {d}");
        }
    }

    #[test]
    fn corpus_is_reproducible_and_in_range() {
        let toy = AlignedToy::new(1, 10);
        let a = synthetic_corpus(&toy, 3, 10);
        let b = synthetic_corpus(&toy, 3, 10);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.reference, y.reference);
            let s = x.features.duration_seconds();
            assert!(s >= MIN_SECONDS - 0.04 && s <= MAX_SECONDS, "{s}");
            assert!(!x.reference.is_empty());
        }
    }

    #[test]
    fn written_corpus_loads() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), 1, 2, 8).unwrap();
        let vocab = Vocabulary::load(dir.path().join("vocab.txt")).unwrap();
        ToyModel::load(dir.path().join("model.txt"), &vocab).unwrap();
        let m = crate::manifest::load_manifest(&dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m[0].reference.as_ref().is_some_and(|r| !r.is_empty()));
        FeatureSequence::load(&m[1].features).unwrap();
    }
}
