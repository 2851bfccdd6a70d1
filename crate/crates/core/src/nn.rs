//! Dense building blocks shared by the toy encoder and decoder.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// `softmax(Q Kᵀ / √d) V` with `d` the query width.
pub fn attention(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<Array2<f64>> {
    if q.ncols() != k.ncols() {
        return Err(Error::Shape(format!(
            "query width {} differs from key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::Shape(format!(
            "{} keys but {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    if k.nrows() == 0 {
        return Err(Error::Shape("attention over an empty key set".into()));
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut weights = q.dot(&k.t()) * scale;
    softmax_rows(&mut weights);
    Ok(weights.dot(&v))
}

/// In-place row-wise softmax.
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

/// Projection matrices of one multi-head attention layer. Head `m` uses
/// columns `m*d .. (m+1)*d` of `wq`, `wk` and `wv`, with `d = d_model / heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaWeights {
    pub heads: usize,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
}

impl MhaWeights {
    pub fn d_model(&self) -> usize {
        self.wq.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.wq.ncols() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dm = self.d_model();
        if self.heads == 0 || self.wq.ncols() % self.heads != 0 {
            return Err(Error::Shape(format!(
                "{} heads do not divide projection width {}",
                self.heads,
                self.wq.ncols()
            )));
        }
        let inner = self.wq.ncols();
        for (name, w) in [("wk", &self.wk), ("wv", &self.wv)] {
            if w.dim() != (dm, inner) {
                return Err(Error::Shape(format!("{name} is {:?}, expected {:?}", w.dim(), (dm, inner))));
            }
        }
        if self.wo.nrows() != inner {
            return Err(Error::Shape(format!("wo has {} rows, expected {inner}", self.wo.nrows())));
        }
        Ok(())
    }

    /// All-zero weights of the given size.
    pub fn zeros(d_model: usize, heads: usize) -> Self {
        Self {
            heads,
            wq: Array2::zeros((d_model, d_model)),
            wk: Array2::zeros((d_model, d_model)),
            wv: Array2::zeros((d_model, d_model)),
            wo: Array2::zeros((d_model, d_model)),
        }
    }
}

/// `Concat(head_1..head_M) W_O` with `head_m = Attention(Q W_Q,m, K W_K,m, V W_V,m)`.
pub fn multi_head_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    w: &MhaWeights,
) -> Result<Array2<f64>> {
    w.validate()?;
    for (name, x) in [("query", &q), ("key", &k), ("value", &v)] {
        if x.ncols() != w.d_model() {
            return Err(Error::Shape(format!(
                "{name} width {} differs from d_model {}",
                x.ncols(),
                w.d_model()
            )));
        }
    }
    let qp = q.dot(&w.wq);
    let kp = k.dot(&w.wk);
    let vp = v.dot(&w.wv);
    multi_head_projected(qp.view(), kp.view(), vp.view(), w)
}

/// Multi-head attention on inputs that are already projected by `wq`, `wk`
/// and `wv`. Lets callers cache key/value projections.
pub fn multi_head_projected(
    qp: ArrayView2<f64>,
    kp: ArrayView2<f64>,
    vp: ArrayView2<f64>,
    w: &MhaWeights,
) -> Result<Array2<f64>> {
    let d = w.head_dim();
    let mut concat = Array2::zeros((qp.nrows(), w.heads * d));
    for m in 0..w.heads {
        let cols = s![.., m * d..(m + 1) * d];
        let head = attention(qp.slice(cols), kp.slice(cols), vp.slice(cols))?;
        concat.slice_mut(cols).assign(&head);
    }
    Ok(concat.dot(&w.wo))
}

/// `x W` for a row vector, accumulated over the contiguous rows of `W`.
pub fn vec_mat(x: ArrayView1<f64>, w: ArrayView2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(w.ncols());
    for (&xi, row) in x.iter().zip(w.rows()) {
        if xi != 0.0 {
            out.scaled_add(xi, &row);
        }
    }
    out
}

/// [`multi_head_projected`] for a single projected query row. Uses
/// matrix-vector products only, which is much cheaper than packing the keys
/// for a one-row matrix product.
pub fn multi_head_projected_row(
    qp: ArrayView1<f64>,
    kp: ArrayView2<f64>,
    vp: ArrayView2<f64>,
    w: &MhaWeights,
) -> Result<Array1<f64>> {
    if kp.nrows() == 0 || kp.nrows() != vp.nrows() {
        return Err(Error::Shape(format!("{} keys and {} values", kp.nrows(), vp.nrows())));
    }
    let d = w.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut concat = Array1::zeros(w.heads * d);
    for m in 0..w.heads {
        let cols = s![m * d..(m + 1) * d];
        let mut weights = kp.slice(s![.., m * d..(m + 1) * d]).dot(&qp.slice(cols)) * scale;
        let max = weights.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        weights.mapv_inplace(|x| (x - max).exp());
        let sum = weights.sum();
        weights /= sum;
        concat
            .slice_mut(cols)
            .assign(&vec_mat(weights.view(), vp.slice(s![.., m * d..(m + 1) * d])));
    }
    Ok(vec_mat(concat.view(), w.wo.view()))
}

/// Affine layer `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn forward_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        vec_mat(x, self.weight.view()) + &self.bias
    }

    pub fn validate(&self, name: &str, input: usize, output: usize) -> Result<()> {
        if self.weight.dim() != (input, output) || self.bias.len() != output {
            return Err(Error::Shape(format!(
                "{name}: weight {:?} / bias {} do not match {input} -> {output}",
                self.weight.dim(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Position-wise `relu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

impl FeedForward {
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let hidden = self.w1.forward(x).mapv(|v| v.max(0.0));
        self.w2.forward(hidden.view())
    }

    pub fn forward_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let hidden = self.w1.forward_row(x).mapv(|v| v.max(0.0));
        self.w2.forward_row(hidden.view())
    }

    pub fn zeros(d_model: usize, d_ff: usize) -> Self {
        Self {
            w1: Linear::zeros(d_model, d_ff),
            w2: Linear::zeros(d_ff, d_model),
        }
    }

    pub fn validate(&self, name: &str, d_model: usize) -> Result<()> {
        let d_ff = self.w1.bias.len();
        self.w1.validate(&format!("{name}.w1"), d_model, d_ff)?;
        self.w2.validate(&format!("{name}.w2"), d_ff, d_model)
    }
}

/// Layer normalization over the last axis with learned gain and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub const LAYER_NORM_EPS: f64 = 1e-12;

impl LayerNorm {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            row *= &self.gamma;
            row += &self.beta;
        }
        out
    }

    pub fn forward_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.forward(x.insert_axis(Axis(0))).remove_axis(Axis(0))
    }

    pub fn validate(&self, name: &str, d: usize) -> Result<()> {
        if self.gamma.len() != d || self.beta.len() != d {
            return Err(Error::Shape(format!("{name}: layer norm width differs from {d}")));
        }
        Ok(())
    }
}

/// Sinusoidal position encodings for positions `start .. start + len`.
pub fn sinusoidal_positions(start: usize, len: usize, d_model: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((len, d_model));
    for (r, mut row) in pe.axis_iter_mut(Axis(0)).enumerate() {
        let pos = (start + r) as f64;
        for i in 0..d_model {
            let pair = (i / 2) as f64;
            let angle = pos / 10000f64.powf(2.0 * pair / d_model as f64);
            row[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

pub fn all_finite(m: &Array2<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_weights_average_values() {
        let q = array![[0.0]];
        let k = array![[0.0], [0.0]];
        let v = array![[1.0], [3.0]];
        let out = attention(q.view(), k.view(), v.view()).unwrap();
        assert_eq!(out, array![[2.0]]);
    }

    #[test]
    fn single_key_returns_its_value() {
        let q = array![[5.0, -2.0], [0.3, 9.0]];
        let k = array![[1.0, 1.0]];
        let v = array![[4.0, -7.0]];
        let out = attention(q.view(), k.view(), v.view()).unwrap();
        assert_eq!(out, array![[4.0, -7.0], [4.0, -7.0]]);
    }

    #[test]
    fn shape_errors() {
        let a = array![[1.0, 2.0]];
        let b = array![[1.0]];
        assert!(attention(a.view(), b.view(), b.view()).is_err());
        let k = array![[1.0, 2.0], [3.0, 4.0]];
        assert!(attention(a.view(), k.view(), a.view()).is_err());
        let w = MhaWeights { heads: 3, ..MhaWeights::zeros(4, 1) };
        let x = Array2::<f64>::zeros((2, 4));
        assert!(multi_head_attention(x.view(), x.view(), x.view(), &w).is_err());
    }

    #[test]
    fn zero_output_projection_gives_zero() {
        let mut w = MhaWeights::zeros(4, 2);
        w.wq = Array2::eye(4);
        w.wk = Array2::eye(4);
        w.wv = Array2::eye(4);
        let x = array![[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 0.0, 2.0]];
        let out = multi_head_attention(x.view(), x.view(), x.view(), &w).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn row_attention_matches_matrix_attention() {
        let w = MhaWeights {
            heads: 2,
            wq: Array2::eye(4),
            wk: Array2::eye(4),
            wv: Array2::eye(4),
            wo: array![[1.0, 0.5, 0.0, 0.0], [0.0, 1.0, 0.0, 0.2], [0.3, 0.0, 1.0, 0.0], [0.0, 0.0, -1.0, 1.0]],
        };
        let q = array![[0.3, -1.0, 0.2, 0.7]];
        let kv = array![[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 0.0, 2.0], [-0.4, 0.1, 0.9, -2.0]];
        let a = multi_head_projected(q.view(), kv.view(), kv.view(), &w).unwrap();
        let b = multi_head_projected_row(q.row(0), kv.view(), kv.view(), &w).unwrap();
        for (x, y) in a.row(0).iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_identity_head_matches_attention() {
        let w = MhaWeights {
            heads: 1,
            wq: Array2::eye(3),
            wk: Array2::eye(3),
            wv: Array2::eye(3),
            wo: Array2::eye(3),
        };
        let q = array![[0.1, 0.2, -0.3], [1.0, 0.0, 0.5]];
        let k = array![[0.3, -0.1, 0.2], [0.0, 0.4, 0.9], [1.5, 0.2, -0.2]];
        let v = array![[1.0, 2.0, 3.0], [-1.0, 0.0, 1.0], [0.5, 0.5, 0.5]];
        let a = multi_head_attention(q.view(), k.view(), v.view(), &w).unwrap();
        let b = attention(q.view(), k.view(), v.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
