//! Differentiable building blocks with hand-written backward passes.
//!
//! Every layer keeps its parameters as `Array2<f64>` (biases are `1 x n`) so
//! that optimizers and gradient checks can treat all tensors alike. `forward`
//! returns the output plus whatever the backward pass needs; `backward` adds
//! parameter gradients into a same-shaped layer and returns the input
//! gradient.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Row-major nested-list (de)serialization for matrices.
pub(crate) mod nested {
    use ndarray::Array2;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = a.outer_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(D::Error::custom("ragged matrix"));
        }
        Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).map_err(D::Error::custom)
    }
}

/// Uniform access to the parameter tensors of a layer or model.
pub trait Params {
    fn tensors(&self) -> Vec<&Array2<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| n.sample(rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    #[serde(with = "nested")]
    pub table: Array2<f64>,
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Embedding { table: gaussian(vocab, dim, 1.0, rng) }
    }

    pub fn forward(&self, ids: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((ids.len(), self.table.ncols()));
        for (t, &id) in ids.iter().enumerate() {
            out.row_mut(t).assign(&self.table.row(id));
        }
        out
    }

    pub fn backward(&self, ids: &[usize], dy: ArrayView2<f64>, grad: &mut Embedding) {
        for (t, &id) in ids.iter().enumerate() {
            let mut row = grad.table.row_mut(id);
            row += &dy.row(t);
        }
    }
}

impl Params for Embedding {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.table]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.table]
    }
}

/// Sinusoidal position codes, `len x dim`.
pub fn positional_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(t, j)| {
        let rate = 10_000f64.powf(-((j / 2 * 2) as f64) / dim as f64);
        let x = t as f64 * rate;
        if j % 2 == 0 {
            x.sin()
        } else {
            x.cos()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    #[serde(with = "nested")]
    pub w: Array2<f64>,
    #[serde(with = "nested")]
    pub b: Array2<f64>,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear { w: gaussian(input, output, 1.0 / (input as f64).sqrt(), rng), b: Array2::zeros((1, output)) }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(&dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

impl Params for Linear {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.b]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// 1-D convolution over time with "same" zero padding.
///
/// With `segments`, a position only sees neighbours that carry the same
/// segment id, so no information crosses a segment boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub kernel: usize,
    /// `(kernel * in) x out`; row `j * in + c` is tap `j` of input channel `c`.
    #[serde(with = "nested")]
    pub w: Array2<f64>,
    #[serde(with = "nested")]
    pub b: Array2<f64>,
}

impl Conv1d {
    pub fn new(input: usize, output: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let fan_in = (kernel * input) as f64;
        Conv1d { kernel, w: gaussian(kernel * input, output, (2.0 / fan_in).sqrt(), rng), b: Array2::zeros((1, output)) }
    }

    fn input_dim(&self) -> usize {
        self.w.nrows() / self.kernel
    }

    fn unfold(&self, x: ArrayView2<f64>, segments: Option<&[usize]>) -> Array2<f64> {
        let (len, c) = x.dim();
        let half = self.kernel / 2;
        let mut u = Array2::zeros((len, self.kernel * c));
        for t in 0..len {
            for j in 0..self.kernel {
                let Some(src) = (t + j).checked_sub(half).filter(|&s| s < len) else { continue };
                if segments.is_some_and(|seg| seg[src] != seg[t]) {
                    continue;
                }
                u.slice_mut(s![t, j * c..(j + 1) * c]).assign(&x.row(src));
            }
        }
        u
    }

    pub fn forward(&self, x: ArrayView2<f64>, segments: Option<&[usize]>) -> (Array2<f64>, Array2<f64>) {
        debug_assert_eq!(x.ncols(), self.input_dim());
        let u = self.unfold(x, segments);
        (u.dot(&self.w) + &self.b, u)
    }

    pub fn backward(
        &self,
        unfolded: &Array2<f64>,
        dy: ArrayView2<f64>,
        segments: Option<&[usize]>,
        grad: &mut Conv1d,
    ) -> Array2<f64> {
        grad.w += &unfolded.t().dot(&dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let du = dy.dot(&self.w.t());
        let len = dy.nrows();
        let c = self.input_dim();
        let half = self.kernel / 2;
        let mut dx = Array2::zeros((len, c));
        for t in 0..len {
            for j in 0..self.kernel {
                let Some(src) = (t + j).checked_sub(half).filter(|&s| s < len) else { continue };
                if segments.is_some_and(|seg| seg[src] != seg[t]) {
                    continue;
                }
                let mut row = dx.row_mut(src);
                row += &du.slice(s![t, j * c..(j + 1) * c]);
            }
        }
        dx
    }
}

impl Params for Conv1d {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.b]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Normalization over the feature axis of each position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    #[serde(with = "nested")]
    pub gamma: Array2<f64>,
    #[serde(with = "nested")]
    pub beta: Array2<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm { gamma: Array2::ones((1, dim)), beta: Array2::zeros((1, dim)) }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= *is;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: ArrayView2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = &dy * &self.gamma;
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for t in 0..dy.nrows() {
            let g = dxhat.row(t);
            let xh = cache.xhat.row(t);
            let mean_g = g.sum() / d;
            let mean_gx = g.dot(&xh) / d;
            let mut out = dx.row_mut(t);
            for j in 0..out.len() {
                out[j] = cache.inv_std[t] * (g[j] - mean_g - xh[j] * mean_gx);
            }
        }
        dx
    }
}

impl Params for LayerNorm {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.gamma, &self.beta]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

thread_local! {
    static RELU_TRACE: std::cell::Cell<Option<u64>> = const { std::cell::Cell::new(None) };
}

/// Run `f` and return a fingerprint of every ReLU on/off decision it made.
pub(crate) fn trace_relu<T>(f: impl FnOnce() -> T) -> (T, u64) {
    RELU_TRACE.with(|c| c.set(Some(0xcbf2_9ce4_8422_2325)));
    let out = f();
    let h = RELU_TRACE.with(|c| c.take()).expect("trace active");
    (out, h)
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    RELU_TRACE.with(|c| {
        if let Some(mut h) = c.get() {
            for &v in x.iter() {
                h = (h ^ u64::from(v > 0.0)).wrapping_mul(0x0100_0000_01b3);
            }
            c.set(Some(h));
        }
    });
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given its pre-activation.
pub fn relu_backward(pre: &Array2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
    let mut dx = dy.to_owned();
    dx.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    dx
}

/// Inverted dropout mask: kept entries are scaled by `1 / (1 - rate)`.
/// `None` (evaluation) means identity.
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    let rng = rng?;
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < rate { 0.0 } else { keep }))
}

pub fn apply_mask(x: Array2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

/// Single-head scaled dot-product self-attention with a residual path:
/// `y = x + softmax(x Wq (x Wk)^T / sqrt(d)) x Wv Wo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAttention {
    #[serde(with = "nested")]
    pub wq: Array2<f64>,
    #[serde(with = "nested")]
    pub wk: Array2<f64>,
    #[serde(with = "nested")]
    pub wv: Array2<f64>,
    #[serde(with = "nested")]
    pub wo: Array2<f64>,
}

pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
    o: Array2<f64>,
}

impl SelfAttention {
    pub fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        SelfAttention {
            wq: gaussian(dim, dim, std, rng),
            wk: gaussian(dim, dim, std, rng),
            wv: gaussian(dim, dim, std, rng),
            wo: gaussian(dim, dim, std, rng),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, AttentionCache) {
        let scale = 1.0 / (self.wq.ncols() as f64).sqrt();
        let q = x.dot(&self.wq);
        let k = x.dot(&self.wk);
        let v = x.dot(&self.wv);
        let mut a = q.dot(&k.t()) * scale;
        for mut row in a.outer_iter_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - m).exp());
            let z = row.sum();
            row /= z;
        }
        let o = a.dot(&v);
        let y = &x + &o.dot(&self.wo);
        (y, AttentionCache { q, k, v, a, o })
    }

    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        cache: &AttentionCache,
        dy: ArrayView2<f64>,
        grad: &mut SelfAttention,
    ) -> Array2<f64> {
        let scale = 1.0 / (self.wq.ncols() as f64).sqrt();
        grad.wo += &cache.o.t().dot(&dy);
        let d_o = dy.dot(&self.wo.t());
        let d_a = d_o.dot(&cache.v.t());
        let d_v = cache.a.t().dot(&d_o);
        let mut d_s = Array2::zeros(d_a.raw_dim());
        for t in 0..d_a.nrows() {
            let a = cache.a.row(t);
            let g = d_a.row(t);
            let inner = a.dot(&g);
            let mut out = d_s.row_mut(t);
            for j in 0..out.len() {
                out[j] = a[j] * (g[j] - inner) * scale;
            }
        }
        let d_q = d_s.dot(&cache.k);
        let d_k = d_s.t().dot(&cache.q);
        grad.wq += &x.t().dot(&d_q);
        grad.wk += &x.t().dot(&d_k);
        grad.wv += &x.t().dot(&d_v);
        let mut dx = dy.to_owned();
        dx += &d_q.dot(&self.wq.t());
        dx += &d_k.dot(&self.wk.t());
        dx += &d_v.dot(&self.wv.t());
        dx
    }
}

impl Params for SelfAttention {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.wq, &self.wk, &self.wv, &self.wo]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }
}

/// Convex combination of the input columns. The weights are the softmax of
/// free logits, so they stay on the simplex whatever the logits become.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simplex {
    #[serde(with = "nested")]
    pub logits: Array2<f64>,
}

impl Simplex {
    pub fn new(n: usize) -> Self {
        Simplex { logits: Array2::zeros((1, n)) }
    }

    pub fn weights(&self) -> Array1<f64> {
        let l = self.logits.row(0);
        let m = l.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let e = l.mapv(|v| (v - m).exp());
        let z = e.sum();
        e / z
    }

    /// `len x n` to `len x 1`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights()).insert_axis(Axis(1))
    }

    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Simplex) -> Array2<f64> {
        let w = self.weights();
        let dy = dy.column(0);
        let dw = x.t().dot(&dy);
        let inner = w.dot(&dw);
        let dl = &w * &(dw - inner);
        grad.logits += &dl.insert_axis(Axis(0));
        dy.to_owned().insert_axis(Axis(1)).dot(&w.insert_axis(Axis(0)))
    }
}

impl Params for Simplex {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.logits]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.logits]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn positional_encoding_starts_at_sin_cos_zero() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0]);
        assert!((pe[[1, 0]] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn segmented_conv_does_not_cross_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv1d::new(2, 3, 3, &mut rng);
        let x = gaussian(6, 2, 1.0, &mut rng);
        let seg = [0, 0, 0, 1, 1, 1];
        let (y, _) = conv.forward(x.view(), Some(&seg));
        let mut x2 = x.clone();
        x2.row_mut(3).fill(100.0);
        let (y2, _) = conv.forward(x2.view(), Some(&seg));
        assert_eq!(y.slice(s![..3, ..]), y2.slice(s![..3, ..]));
        let (y3, _) = conv.forward(x2.view(), None);
        assert_ne!(y.slice(s![..3, ..]), y3.slice(s![..3, ..]));
    }

    #[test]
    fn simplex_of_equal_columns_is_identity() {
        let mut s = Simplex::new(3);
        s.logits = Array2::from_shape_vec((1, 3), vec![0.3, -2.0, 1.5]).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(t, _)| t as f64 * 0.7 - 1.0);
        let y = s.forward(x.view());
        for t in 0..4 {
            assert!((y[[t, 0]] - x[[t, 0]]).abs() < 1e-12);
        }
        assert!((s.weights().sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nested_serialization_round_trips() {
        let l = Linear { w: Array2::from_shape_vec((2, 2), vec![1.0, 0.1, -3.5, 1e-300]).unwrap(), b: Array2::zeros((1, 2)) };
        let j = serde_json::to_string(&l).unwrap();
        assert_eq!(j, r#"{"w":[[1.0,0.1],[-3.5,1e-300]],"b":[[0.0,0.0]]}"#);
        assert_eq!(serde_json::from_str::<Linear>(&j).unwrap(), l);
        assert!(serde_json::from_str::<Linear>(r#"{"w":[[1.0],[1.0,2.0]],"b":[[0.0]]}"#).is_err());
    }
}
