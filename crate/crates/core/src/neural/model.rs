use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emphfeat::FeatureKind;
use crate::error::{Error, Result};

use super::layers::{
    apply_mask, dropout_mask, positional_encoding, relu, relu_backward, AttentionCache, Conv1d, Embedding, LayerNorm,
    LayerNormCache, Linear, Params, SelfAttention, Simplex,
};

pub type EmphasisMode = FeatureKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_blocks: usize,
    pub kernel_size: usize,
    pub attention: bool,
    pub predictor_layers: usize,
    pub dropout: f64,
    pub quantization_bins: usize,
    pub mode: EmphasisMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            encoder_blocks: 2,
            kernel_size: 3,
            attention: true,
            predictor_layers: 2,
            dropout: 0.2,
            quantization_bins: 32,
            mode: EmphasisMode::Wavelet,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<()> {
        if self.embed_dim == 0 || self.kernel_size == 0 || self.predictor_layers == 0 || self.quantization_bins == 0 {
            return Err(Error::InvalidInput("model dimensions must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidInput(format!("kernel size must be odd, got {}", self.kernel_size)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Number of emphasis predictor heads (and emphasis targets) per mode.
pub fn emphasis_heads(mode: EmphasisMode) -> usize {
    match mode {
        EmphasisMode::Variance => 2,
        EmphasisMode::Wavelet => 1,
        EmphasisMode::Combined => 3,
    }
}

/// Width of the emphasis signal the prosody heads are conditioned on (and
/// that biases act on).
pub fn emphasis_dim(mode: EmphasisMode) -> usize {
    match mode {
        EmphasisMode::Variance => 2,
        EmphasisMode::Wavelet | EmphasisMode::Combined => 1,
    }
}

pub const PROSODY_STREAMS: [&str; 3] = ["duration", "pitch", "energy"];

/// Affine standardization `z = (x - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// Population statistics; a zero spread falls back to 1.
    pub fn fit(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return Standardizer { mean: 0.0, std: 1.0 };
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        Standardizer { mean, std: if var > 0.0 { var.sqrt() } else { 1.0 } }
    }

    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Corpus statistics fixed before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    /// One per emphasis head.
    pub emphasis: Vec<Standardizer>,
    /// Log-duration, log-pitch, energy.
    pub prosody: [Standardizer; 3],
    /// Quantization ranges (log-pitch, dB).
    pub pitch_range: (f64, f64),
    pub energy_range: (f64, f64),
}

/// Conv, ReLU, layer norm and dropout, twice (by default), then a linear map
/// to one output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorHead {
    pub convs: Vec<Conv1d>,
    pub norms: Vec<LayerNorm>,
    pub out: Linear,
}

pub struct HeadCache {
    unfolded: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    norm: Vec<LayerNormCache>,
    masks: Vec<Option<Array2<f64>>>,
    hidden: Array2<f64>,
}

impl PredictorHead {
    pub fn new(input: usize, dim: usize, layers: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let convs = (0..layers).map(|l| Conv1d::new(if l == 0 { input } else { dim }, dim, kernel, rng)).collect();
        let norms = (0..layers).map(|_| LayerNorm::new(dim)).collect();
        PredictorHead { convs, norms, out: Linear::new(dim, 1, rng) }
    }

    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        segments: Option<&[usize]>,
        dropout: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, HeadCache) {
        let mut cache =
            HeadCache { unfolded: Vec::new(), pre: Vec::new(), norm: Vec::new(), masks: Vec::new(), hidden: Array2::zeros((0, 0)) };
        let mut h = x.to_owned();
        for (conv, ln) in self.convs.iter().zip(&self.norms) {
            let (c, u) = conv.forward(h.view(), segments);
            let (n, nc) = ln.forward(relu(&c).view());
            let mask = dropout_mask(n.dim(), dropout, rng.as_deref_mut());
            h = apply_mask(n, mask.as_ref());
            cache.unfolded.push(u);
            cache.pre.push(c);
            cache.norm.push(nc);
            cache.masks.push(mask);
        }
        let y = self.out.forward(h.view());
        cache.hidden = h;
        (y, cache)
    }

    pub fn backward(
        &self,
        cache: &HeadCache,
        dy: ArrayView2<f64>,
        segments: Option<&[usize]>,
        grad: &mut PredictorHead,
    ) -> Array2<f64> {
        let mut dh = self.out.backward(cache.hidden.view(), dy, &mut grad.out);
        for l in (0..self.convs.len()).rev() {
            let dn = apply_mask(dh, cache.masks[l].as_ref());
            let dr = self.norms[l].backward(&cache.norm[l], dn.view(), &mut grad.norms[l]);
            let dc = relu_backward(&cache.pre[l], dr.view());
            dh = self.convs[l].backward(&cache.unfolded[l], dc.view(), segments, &mut grad.convs[l]);
        }
        dh
    }
}

impl Params for PredictorHead {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v: Vec<&Array2<f64>> = Vec::new();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            v.extend(c.tensors());
            v.extend(n.tensors());
        }
        v.extend(self.out.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v: Vec<&mut Array2<f64>> = Vec::new();
        for (c, n) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            v.extend(c.tensors_mut());
            v.extend(n.tensors_mut());
        }
        v.extend(self.out.tensors_mut());
        v
    }
}

/// Phoneme embedding plus position codes, conv blocks, optional attention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub embedding: Embedding,
    pub convs: Vec<Conv1d>,
    pub norms: Vec<LayerNorm>,
    pub attention: Option<SelfAttention>,
}

pub struct EncoderCache {
    inputs: Vec<Array2<f64>>,
    unfolded: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    norm: Vec<LayerNormCache>,
    masks: Vec<Option<Array2<f64>>>,
    attention: Option<(Array2<f64>, AttentionCache)>,
}

impl Encoder {
    fn new(cfg: &ModelConfig, vocab: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.embed_dim;
        Encoder {
            embedding: Embedding::new(vocab, d, rng),
            convs: (0..cfg.encoder_blocks).map(|_| Conv1d::new(d, d, cfg.kernel_size, rng)).collect(),
            norms: (0..cfg.encoder_blocks).map(|_| LayerNorm::new(d)).collect(),
            attention: cfg.attention.then(|| SelfAttention::new(d, rng)),
        }
    }

    fn forward(&self, ids: &[usize], dropout: f64, mut rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, EncoderCache) {
        let d = self.embedding.table.ncols();
        let mut h = self.embedding.forward(ids) + positional_encoding(ids.len(), d);
        let mut cache = EncoderCache {
            inputs: Vec::new(),
            unfolded: Vec::new(),
            pre: Vec::new(),
            norm: Vec::new(),
            masks: Vec::new(),
            attention: None,
        };
        for (conv, ln) in self.convs.iter().zip(&self.norms) {
            let (c, u) = conv.forward(h.view(), None);
            let (n, nc) = ln.forward(relu(&c).view());
            let mask = dropout_mask(n.dim(), dropout, rng.as_deref_mut());
            cache.inputs.push(h);
            h = apply_mask(n, mask.as_ref());
            cache.unfolded.push(u);
            cache.pre.push(c);
            cache.norm.push(nc);
            cache.masks.push(mask);
        }
        if let Some(att) = &self.attention {
            let (y, ac) = att.forward(h.view());
            cache.attention = Some((h, ac));
            h = y;
        }
        (h, cache)
    }

    fn backward(&self, ids: &[usize], cache: &EncoderCache, dy: Array2<f64>, grad: &mut Encoder) {
        let mut dh = dy;
        if let (Some(att), Some((x, ac))) = (&self.attention, &cache.attention) {
            dh = att.backward(x.view(), ac, dh.view(), grad.attention.as_mut().expect("same shape"));
        }
        for l in (0..self.convs.len()).rev() {
            let dn = apply_mask(dh, cache.masks[l].as_ref());
            let dr = self.norms[l].backward(&cache.norm[l], dn.view(), &mut grad.norms[l]);
            let dc = relu_backward(&cache.pre[l], dr.view());
            dh = self.convs[l].backward(&cache.unfolded[l], dc.view(), None, &mut grad.convs[l]);
        }
        self.embedding.backward(ids, dh.view(), &mut grad.embedding);
    }
}

impl Params for Encoder {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = self.embedding.tensors();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            v.extend(c.tensors());
            v.extend(n.tensors());
        }
        if let Some(a) = &self.attention {
            v.extend(a.tensors());
        }
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.embedding.tensors_mut();
        for (c, n) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            v.extend(c.tensors_mut());
            v.extend(n.tensors_mut());
        }
        if let Some(a) = &mut self.attention {
            v.extend(a.tensors_mut());
        }
        v
    }
}

/// One utterance as the model sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneInput {
    pub ids: Vec<usize>,
    /// Word index of each phone; pause phones get ids past the last word so
    /// that each forms its own segment.
    pub segments: Vec<usize>,
    /// Phone range of every word.
    pub words: Vec<std::ops::Range<usize>>,
}

pub fn phone_input(vocab: &[String], utt: &crate::datamodel::AlignedUtterance) -> Result<PhoneInput> {
    let ids = utt
        .phones
        .iter()
        .map(|p| {
            vocab
                .iter()
                .position(|v| *v == p.label)
                .ok_or_else(|| Error::InvalidInput(format!("{}: phone {:?} is not in the model vocabulary", utt.id, p.label)))
        })
        .collect::<Result<Vec<_>>>()?;
    let words: Vec<_> = utt.words.iter().map(|w| w.phone_range()).collect();
    let mut segments: Vec<usize> = (0..ids.len()).map(|i| words.len() + i).collect();
    for (wi, r) in words.iter().enumerate() {
        for s in &mut segments[r.clone()] {
            *s = wi;
        }
    }
    Ok(PhoneInput { ids, segments, words })
}

/// Per-head mean squared errors of one utterance or batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub emphasis: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
}

impl LossBreakdown {
    pub(crate) fn add_scaled(&mut self, o: &LossBreakdown, s: f64) {
        self.total += s * o.total;
        self.emphasis += s * o.emphasis;
        self.duration += s * o.duration;
        self.pitch += s * o.pitch;
        self.energy += s * o.energy;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub emphasis: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { emphasis: 1.0, duration: 1.0, pitch: 1.0, energy: 1.0 }
    }
}

/// Standardized training targets of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTargets<'a> {
    /// `len x heads`.
    pub emphasis: ArrayView2<'a, f64>,
    /// `len x 3`: log-duration, log-pitch, energy.
    pub prosody: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub step: u64,
    pub stats: TargetStats,
    pub encoder: Encoder,
    pub emphasis_heads: Vec<PredictorHead>,
    pub simplex: Option<Simplex>,
    pub duration_head: PredictorHead,
    pub pitch_head: PredictorHead,
    pub energy_head: PredictorHead,
    /// Lookup tables for quantized pitch and energy on the frame-level path.
    pub pitch_embedding: Embedding,
    pub energy_embedding: Embedding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Output of [`PredictorModel::infer`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `len x emphasis_dim`, in feature units, after any bias.
    pub emphasis: Array2<f64>,
    pub log_duration: Vec<f64>,
    pub duration_frames: Vec<usize>,
    pub pitch_hz: Vec<f64>,
    pub energy_db: Vec<f64>,
    /// Encodings plus quantized pitch/energy embeddings, upsampled to frames.
    pub frames: Array2<f64>,
}

impl PredictorModel {
    pub fn new(config: ModelConfig, vocab: Vec<String>, stats: TargetStats) -> Result<Self> {
        config.check()?;
        if vocab.is_empty() {
            return Err(Error::InvalidInput("empty phone vocabulary".into()));
        }
        let heads = emphasis_heads(config.mode);
        if stats.emphasis.len() != heads {
            return Err(Error::InvalidInput(format!("expected {heads} emphasis standardizers, got {}", stats.emphasis.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embed_dim;
        let (layers, k) = (config.predictor_layers, config.kernel_size);
        let encoder = Encoder::new(&config, vocab.len(), &mut rng);
        let emphasis_heads = (0..heads).map(|_| PredictorHead::new(d, d, layers, k, &mut rng)).collect();
        let simplex = (config.mode == EmphasisMode::Combined).then(|| Simplex::new(3));
        let cond = d + emphasis_dim(config.mode);
        let duration_head = PredictorHead::new(cond, d, layers, k, &mut rng);
        let pitch_head = PredictorHead::new(cond, d, layers, k, &mut rng);
        let energy_head = PredictorHead::new(cond, d, layers, k, &mut rng);
        let pitch_embedding = Embedding::new(config.quantization_bins, d, &mut rng);
        let energy_embedding = Embedding::new(config.quantization_bins, d, &mut rng);
        Ok(PredictorModel {
            config,
            vocab,
            step: 0,
            stats,
            encoder,
            emphasis_heads,
            simplex,
            duration_head,
            pitch_head,
            energy_head,
            pitch_embedding,
            energy_embedding,
            config_hash: None,
        })
    }

    pub fn phone_id(&self, label: &str) -> Option<usize> {
        self.vocab.iter().position(|v| v == label)
    }

    /// Map an utterance's phones onto model ids. Unknown labels are an error.
    pub fn input_for(&self, utt: &crate::datamodel::AlignedUtterance) -> Result<PhoneInput> {
        phone_input(&self.vocab, utt)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.vocab.len()) {
            Some(bad) => Err(Error::InvalidInput(format!("phone id {bad} out of range (vocabulary {})", self.vocab.len()))),
            None => Ok(()),
        }
    }

    pub fn encode(&self, ids: &[usize]) -> Result<Array2<f64>> {
        self.check_ids(ids)?;
        Ok(self.encoder.forward(ids, 0.0, None).0)
    }

    /// Raw head outputs, `len x heads`, in standardized units.
    pub fn emphasis_head_outputs(&self, enc: ArrayView2<f64>) -> Array2<f64> {
        let cols: Vec<Array2<f64>> = self.emphasis_heads.iter().map(|h| h.forward(enc, None, 0.0, None).0).collect();
        concatenate(Axis(1), &cols.iter().map(|c| c.view()).collect::<Vec<_>>()).expect("equal lengths")
    }

    /// Per-phone emphasis in feature units, `len x emphasis_dim`. In combined
    /// mode the three heads are mixed by the simplex layer and the result
    /// stays in standardized units.
    pub fn predict_emphasis(&self, enc: ArrayView2<f64>) -> Array2<f64> {
        let z = self.emphasis_head_outputs(enc);
        match &self.simplex {
            Some(sx) => sx.forward(z.view()),
            None => {
                let mut out = z;
                for (mut col, st) in out.columns_mut().into_iter().zip(&self.stats.emphasis) {
                    col.mapv_inplace(|v| st.inverse(v));
                }
                out
            }
        }
    }

    /// Prosody head input units for an emphasis signal in feature units.
    fn condition(&self, emphasis: ArrayView2<f64>) -> Array2<f64> {
        match self.config.mode {
            EmphasisMode::Combined => emphasis.to_owned(),
            _ => {
                let mut z = emphasis.to_owned();
                for (mut col, st) in z.columns_mut().into_iter().zip(&self.stats.emphasis) {
                    col.mapv_inplace(|v| st.forward(v));
                }
                z
            }
        }
    }

    /// Standardized (log-duration, log-pitch, energy) per phone, `len x 3`.
    pub fn predict_prosody(
        &self,
        enc: ArrayView2<f64>,
        emphasis: ArrayView2<f64>,
        segments: &[usize],
    ) -> Result<Array2<f64>> {
        let want = emphasis_dim(self.config.mode);
        if emphasis.ncols() != want || emphasis.nrows() != enc.nrows() {
            return Err(Error::InvalidInput(format!(
                "emphasis must be {} x {want}, got {} x {}",
                enc.nrows(),
                emphasis.nrows(),
                emphasis.ncols()
            )));
        }
        let x = concatenate(Axis(1), &[enc, self.condition(emphasis).view()]).expect("equal lengths");
        let cols: Vec<Array2<f64>> = [&self.duration_head, &self.pitch_head, &self.energy_head]
            .iter()
            .map(|h| h.forward(x.view(), Some(segments), 0.0, None).0)
            .collect();
        Ok(concatenate(Axis(1), &cols.iter().map(|c| c.view()).collect::<Vec<_>>()).expect("equal lengths"))
    }

    /// Hierarchical inference: encoder, emphasis, optional edit of the
    /// predicted emphasis, prosody, then the frame-level path.
    pub fn infer_with(
        &self,
        input: &PhoneInput,
        edit: impl FnOnce(&mut Array2<f64>) -> Result<()>,
    ) -> Result<Prediction> {
        let enc = self.encode(&input.ids)?;
        let mut emphasis = self.predict_emphasis(enc.view());
        edit(&mut emphasis)?;
        let z = self.predict_prosody(enc.view(), emphasis.view(), &input.segments)?;
        let [sd, sp, se] = self.stats.prosody;
        let log_duration: Vec<f64> = z.column(0).iter().map(|&v| sd.inverse(v)).collect();
        let duration_frames: Vec<usize> = log_duration.iter().map(|&l| (l.exp().round() as usize).max(1)).collect();
        let log_pitch: Vec<f64> = z.column(1).iter().map(|&v| sp.inverse(v)).collect();
        let energy_db: Vec<f64> = z.column(2).iter().map(|&v| se.inverse(v)).collect();
        let bins = self.config.quantization_bins;
        let mut phone_vectors = enc;
        phone_vectors += &quantize_embed(&log_pitch, bins, self.stats.pitch_range, &self.pitch_embedding);
        phone_vectors += &quantize_embed(&energy_db, bins, self.stats.energy_range, &self.energy_embedding);
        let frames = length_regulate(phone_vectors.view(), &duration_frames);
        Ok(Prediction {
            emphasis,
            log_duration,
            duration_frames,
            pitch_hz: log_pitch.iter().map(|l| l.exp()).collect(),
            energy_db,
            frames,
        })
    }

    pub fn infer(&self, input: &PhoneInput) -> Result<Prediction> {
        self.infer_with(input, |_| Ok(()))
    }

    /// Teacher-forced loss of one utterance. With `grad`, parameter gradients
    /// scaled by `grad_scale` are added into it. With `rng`, dropout is
    /// active.
    pub fn loss(
        &self,
        input: &PhoneInput,
        targets: &SampleTargets,
        weights: &LossWeights,
        rng: Option<&mut ChaCha8Rng>,
        grad: Option<(&mut PredictorModel, f64)>,
    ) -> Result<LossBreakdown> {
        self.check_ids(&input.ids)?;
        let len = input.ids.len();
        let heads = self.emphasis_heads.len();
        if targets.emphasis.dim() != (len, heads) || targets.prosody.dim() != (len, 3) {
            return Err(Error::InvalidInput("target shapes do not match the input".into()));
        }
        if len == 0 {
            return Ok(LossBreakdown::default());
        }
        let training = rng.is_some();
        let rate = if training { self.config.dropout } else { 0.0 };
        let mut rng = rng;
        let (enc, enc_cache) = self.encoder.forward(&input.ids, rate, rng.as_deref_mut());

        let mut emph_out = Vec::with_capacity(heads);
        for h in &self.emphasis_heads {
            emph_out.push(h.forward(enc.view(), None, rate, rng.as_deref_mut()));
        }
        // Teacher forcing: prosody heads see the ground-truth emphasis.
        let cond = match &self.simplex {
            Some(sx) => sx.forward(targets.emphasis),
            None => targets.emphasis.to_owned(),
        };
        let x = concatenate(Axis(1), &[enc.view(), cond.view()]).expect("equal lengths");
        let pros_heads = [&self.duration_head, &self.pitch_head, &self.energy_head];
        let mut pros_out = Vec::with_capacity(3);
        for h in pros_heads {
            pros_out.push(h.forward(x.view(), Some(&input.segments), rate, rng.as_deref_mut()));
        }

        let n = len as f64;
        let mut emph_err = Vec::with_capacity(heads);
        let mut emphasis = 0.0;
        for (k, (y, _)) in emph_out.iter().enumerate() {
            let e = &y.column(0) - &targets.emphasis.column(k);
            emphasis += e.dot(&e) / (n * heads as f64);
            emph_err.push(e);
        }
        let mut pros = [0.0; 3];
        let mut pros_err = Vec::with_capacity(3);
        for (k, (y, _)) in pros_out.iter().enumerate() {
            let e = &y.column(0) - &targets.prosody.column(k);
            pros[k] = e.dot(&e) / n;
            pros_err.push(e);
        }
        let total = weights.emphasis * emphasis
            + weights.duration * pros[0]
            + weights.pitch * pros[1]
            + weights.energy * pros[2];
        let breakdown = LossBreakdown { total, emphasis, duration: pros[0], pitch: pros[1], energy: pros[2] };

        let Some((grad, scale)) = grad else { return Ok(breakdown) };
        let d = self.config.embed_dim;
        let mut d_enc: Array2<f64> = Array2::zeros(enc.raw_dim());
        for (k, ((_, cache), e)) in emph_out.iter().zip(&emph_err).enumerate() {
            let dy = (e * (2.0 * scale * weights.emphasis / (n * heads as f64))).insert_axis(Axis(1));
            d_enc += &self.emphasis_heads[k].backward(cache, dy.view(), None, &mut grad.emphasis_heads[k]);
        }
        let pw = [weights.duration, weights.pitch, weights.energy];
        let mut d_x: Array2<f64> = Array2::zeros(x.raw_dim());
        let grad_heads = [&mut grad.duration_head, &mut grad.pitch_head, &mut grad.energy_head];
        for (k, (((_, cache), e), g)) in pros_out.iter().zip(&pros_err).zip(grad_heads).enumerate() {
            let dy = (e * (2.0 * scale * pw[k] / n)).insert_axis(Axis(1));
            d_x += &pros_heads[k].backward(cache, dy.view(), Some(&input.segments), g);
        }
        d_enc += &d_x.slice(s![.., ..d]);
        if let (Some(sx), Some(gsx)) = (&self.simplex, grad.simplex.as_mut()) {
            // The targets are constants; only the mixing weights learn here.
            sx.backward(targets.emphasis, d_x.slice(s![.., d..]), gsx);
        }
        self.encoder.backward(&input.ids, &enc_cache, d_enc, &mut grad.encoder);
        Ok(breakdown)
    }

    pub fn simplex_weights(&self) -> Option<Vec<f64>> {
        self.simplex.as_ref().map(|s| s.weights().to_vec())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: PredictorModel = serde_json::from_str(text)?;
        m.config.check()?;
        let fresh = PredictorModel::new(m.config.clone(), m.vocab.clone(), m.stats.clone())?;
        let shapes = |p: &PredictorModel| {
            let mut v: Vec<_> = p.tensors().iter().map(|t| t.dim()).collect();
            v.push(p.pitch_embedding.table.dim());
            v.push(p.energy_embedding.table.dim());
            v
        };
        if shapes(&m) != shapes(&fresh) {
            return Err(Error::InvalidInput("checkpoint tensor shapes do not match its config".into()));
        }
        Ok(m)
    }
}

/// Trainable tensors. The quantization tables are excluded: nothing
/// downstream of them is trained.
impl Params for PredictorModel {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = self.encoder.tensors();
        for h in &self.emphasis_heads {
            v.extend(h.tensors());
        }
        if let Some(s) = &self.simplex {
            v.extend(s.tensors());
        }
        v.extend(self.duration_head.tensors());
        v.extend(self.pitch_head.tensors());
        v.extend(self.energy_head.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.encoder.tensors_mut();
        for h in &mut self.emphasis_heads {
            v.extend(h.tensors_mut());
        }
        if let Some(s) = &mut self.simplex {
            v.extend(s.tensors_mut());
        }
        v.extend(self.duration_head.tensors_mut());
        v.extend(self.pitch_head.tensors_mut());
        v.extend(self.energy_head.tensors_mut());
        v
    }
}

/// Bin index `floor((v - min) / (max - min) * bins)`, clamped to the table.
pub fn quantize(v: f64, bins: usize, range: (f64, f64)) -> usize {
    let (lo, hi) = range;
    let b = ((v - lo) / (hi - lo) * bins as f64).floor();
    if b.is_nan() || b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

pub fn quantize_embed(values: &[f64], bins: usize, range: (f64, f64), table: &Embedding) -> Array2<f64> {
    let ids: Vec<usize> = values.iter().map(|&v| quantize(v, bins, range)).collect();
    table.forward(&ids)
}

/// Repeat row `i` `counts[i]` times.
pub fn length_regulate(vectors: ArrayView2<f64>, counts: &[usize]) -> Array2<f64> {
    let total: usize = counts.iter().sum();
    let mut out = Array2::zeros((total, vectors.ncols()));
    let mut t = 0;
    for (row, &c) in vectors.outer_iter().zip(counts) {
        for _ in 0..c {
            out.row_mut(t).assign(&row);
            t += 1;
        }
    }
    out
}
