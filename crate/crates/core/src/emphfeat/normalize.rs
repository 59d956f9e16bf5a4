use serde::{Deserialize, Serialize};

use crate::datamodel::FeatureStats;
use crate::error::{Error, Result};

use super::RawWordFeatures;

pub const FEATURE_NAMES: [&str; 3] = ["pitch_var", "dur_var", "wavelet"];

/// Power of σ in the normalization denominator `3σ^p`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum NormExponent {
    /// Divide by `3σ`.
    One,
    /// Divide by `3σ²`.
    #[default]
    Two,
}

impl TryFrom<u8> for NormExponent {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(NormExponent::One),
            2 => Ok(NormExponent::Two),
            other => Err(format!("normalization exponent must be 1 or 2, got {other}")),
        }
    }
}

impl From<NormExponent> for u8 {
    fn from(e: NormExponent) -> u8 {
        match e {
            NormExponent::One => 1,
            NormExponent::Two => 2,
        }
    }
}

/// Population mean and variance of each raw feature over every word of the
/// corpus.
///
/// Values are pooled and sorted before summation, so the result does not
/// depend on utterance or word order.
pub fn fit_stats(corpus: &[Vec<RawWordFeatures>]) -> Result<FeatureStats> {
    let words: usize = corpus.iter().map(Vec::len).sum();
    if words == 0 {
        return Err(Error::InvalidInput("cannot fit statistics on an empty corpus".into()));
    }
    if words < 2 {
        return Err(Error::InvalidInput("need at least 2 words to fit statistics".into()));
    }
    let mut means = [0.0; 3];
    let mut variances = [0.0; 3];
    for f in 0..3 {
        let mut v: Vec<f64> = corpus.iter().flatten().map(|r| r.as_array()[f]).collect();
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite {} value {bad}", FEATURE_NAMES[f])));
        }
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / words as f64;
        let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        dev.sort_by(f64::total_cmp);
        means[f] = mean;
        variances[f] = dev.iter().sum::<f64>() / words as f64;
    }
    Ok(FeatureStats { means, variances, corpus_size: words, config_hash: None })
}

/// Map `[-3σ^p, 3σ^p]` linearly onto `[-1, 1]`. Values outside are not
/// clamped.
pub fn normalize(raw: f64, variance: f64, exponent: NormExponent) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::Degenerate(format!("feature variance is {variance}; cannot normalize")));
    }
    let scale = match exponent {
        NormExponent::Two => 3.0 * variance,
        NormExponent::One => 3.0 * variance.sqrt(),
    };
    Ok(raw / scale)
}

/// Fitted statistics bundled with the exponent in use.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub stats: FeatureStats,
    pub exponent: NormExponent,
}

impl Normalizer {
    pub fn new(stats: FeatureStats, exponent: NormExponent) -> Self {
        Normalizer { stats, exponent }
    }

    pub fn normalize(&self, feature: usize, raw: f64) -> Result<f64> {
        normalize(raw, self.stats.variances[feature], self.exponent).map_err(|e| match e {
            Error::Degenerate(m) => Error::Degenerate(format!("{}: {m}", FEATURE_NAMES[feature])),
            other => other,
        })
    }

    pub fn normalize_all(&self, raw: &RawWordFeatures) -> Result<[f64; 3]> {
        let r = raw.as_array();
        Ok([self.normalize(0, r[0])?, self.normalize(1, r[1])?, self.normalize(2, r[2])?])
    }

    /// Inverse mapping, used when biases in normalized units must be shown in
    /// raw units.
    pub fn denormalize(&self, feature: usize, value: f64) -> f64 {
        let v = self.stats.variances[feature];
        match self.exponent {
            NormExponent::Two => value * 3.0 * v,
            NormExponent::One => value * 3.0 * v.sqrt(),
        }
    }
}
