//! The three word-level emphasis feature families and their normalization.
//!
//! * variance features: word minus sentence log-pitch spread and mean phone
//!   duration;
//! * wavelet feature: strongest LoMA line anchored in each word;
//! * combined feature: a convex combination of the three normalized values.

mod combined;
mod normalize;
mod variance;

pub use combined::{combined_feature, fit_combined_weights, fit_combined_weights_corpus, CombinedWeights, WeightFit};
pub use normalize::{fit_stats, normalize, NormExponent, Normalizer, FEATURE_NAMES};
pub use variance::{percentile, variance_features, VarianceFeatures};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cwt::{extract_loma, prosody_streams, word_prominence, StreamScaleograms, WaveletConfig};
use crate::datamodel::{AlignedUtterance, EmphasisFeatures, WordFeatures};
use crate::error::Result;

/// Un-normalized per-word features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawWordFeatures {
    pub pitch_var: f64,
    pub dur_var: f64,
    pub wavelet: f64,
}

impl RawWordFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.pitch_var, self.dur_var, self.wavelet]
    }
}

/// Which emphasis representation a model or detector works with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Variance,
    Wavelet,
    Combined,
}

impl std::str::FromStr for FeatureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "variance" => Ok(FeatureKind::Variance),
            "wavelet" => Ok(FeatureKind::Wavelet),
            "combined" => Ok(FeatureKind::Combined),
            other => Err(format!("unknown feature kind {other:?} (variance|wavelet|combined)")),
        }
    }
}

impl FeatureKind {
    /// Scalar a detector thresholds. The two variance features enter with
    /// equal weight.
    pub fn detection_value(self, w: &WordFeatures) -> f64 {
        match self {
            FeatureKind::Variance => 0.5 * (w.pitch_var + w.dur_var),
            FeatureKind::Wavelet => w.wavelet,
            FeatureKind::Combined => w.combined,
        }
    }
}

/// Detection values of every word, one vector per utterance.
pub fn detection_values(features: &[EmphasisFeatures], kind: FeatureKind) -> Vec<Vec<f64>> {
    features.iter().map(|f| f.per_word.iter().map(|w| kind.detection_value(w)).collect()).collect()
}

/// Per-word wavelet prominence of one utterance.
///
/// The three prosody streams are transformed separately and mixed in the
/// coefficient domain, which equals transforming the composite signal.
pub fn wavelet_feature(utt: &AlignedUtterance, cfg: &WaveletConfig) -> Result<Vec<f64>> {
    let streams = prosody_streams(utt, cfg.duration_smoothing)?;
    let sgs = StreamScaleograms::compute(
        &streams,
        cfg.num_scales,
        cfg.base_scale_frames,
        cfg.padding,
        cfg.weights.duration != 0.0,
    )?;
    let sg = sgs.combine(&cfg.weights, cfg.num_scales);
    Ok(word_prominence(&extract_loma(&sg), utt, cfg.aggregation))
}

pub fn raw_features(utt: &AlignedUtterance, cfg: &WaveletConfig) -> Result<Vec<RawWordFeatures>> {
    let var = variance_features(utt)?;
    let wav = wavelet_feature(utt, cfg)?;
    Ok(var
        .into_iter()
        .zip(wav)
        .map(|(v, w)| RawWordFeatures { pitch_var: v.pitch_var, dur_var: v.dur_var, wavelet: w })
        .collect())
}

/// Raw features of every utterance, computed in parallel, in corpus order.
pub fn extract_corpus(corpus: &[AlignedUtterance], cfg: &WaveletConfig) -> Result<Vec<Vec<RawWordFeatures>>> {
    corpus.par_iter().map(|u| raw_features(u, cfg)).collect()
}

/// Fit statistics on `raw` and emit normalized records for every utterance.
pub fn normalize_corpus(
    corpus: &[AlignedUtterance],
    raw: &[Vec<RawWordFeatures>],
    normalizer: &Normalizer,
    weights: &CombinedWeights,
) -> Result<Vec<EmphasisFeatures>> {
    corpus.iter().zip(raw).map(|(u, r)| emphasis_features(u, r, normalizer, weights)).collect()
}

/// Normalize raw features and attach the combined value.
pub fn emphasis_features(
    utt: &AlignedUtterance,
    raw: &[RawWordFeatures],
    normalizer: &Normalizer,
    weights: &CombinedWeights,
) -> Result<EmphasisFeatures> {
    let per_word = raw
        .iter()
        .map(|r| {
            let n = normalizer.normalize_all(r)?;
            Ok(WordFeatures { pitch_var: n[0], dur_var: n[1], wavelet: n[2], combined: weights.apply(&n) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmphasisFeatures { utterance_id: utt.id.clone(), per_word, raw: false, config_hash: None })
}

/// Raw features in the JSON-lines record layout (`combined` is 0 before
/// normalization).
pub fn raw_emphasis_features(utt: &AlignedUtterance, raw: &[RawWordFeatures]) -> EmphasisFeatures {
    EmphasisFeatures {
        utterance_id: utt.id.clone(),
        per_word: raw
            .iter()
            .map(|r| WordFeatures { pitch_var: r.pitch_var, dur_var: r.dur_var, wavelet: r.wavelet, combined: 0.0 })
            .collect(),
        raw: true,
        config_hash: None,
    }
}
