//! Continuous wavelet analysis of a composite prosody signal and extraction
//! of lines of maximum amplitude (LoMA).
//!
//! The pipeline is: [`build_composite`] turns an utterance into one per-frame
//! signal, [`cwt_transform`] correlates it with Ricker wavelets at dyadic
//! scales, [`extract_loma`] chains local maxima from fine to coarse scales, and
//! [`word_prominence`] collapses the chains onto words.

mod composite;
mod loma;
mod transform;

pub use composite::{build_composite, interpolated_log_pitch, moving_average, prosody_streams, zscore, CompositeSignal, CompositeWeights, ProsodyStreams};
pub use loma::{extract_loma, local_maxima, word_prominence, Aggregation, ProminenceLine};
pub use transform::{cwt_transform, cwt_transform_with, ricker, scaleogram_to_csv, Padding, Scaleogram, StreamScaleograms};

use serde::{Deserialize, Serialize};

/// Every knob of the wavelet prominence feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveletConfig {
    pub weights: CompositeWeights,
    pub num_scales: usize,
    pub base_scale_frames: f64,
    /// Moving-average width applied to the duration stream.
    pub duration_smoothing: usize,
    pub aggregation: Aggregation,
    /// How the signal is extended past its ends. The feature pipeline embeds
    /// utterances in a neutral (zero) context so that scales longer than the
    /// utterance stay usable.
    pub padding: Padding,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig {
            weights: CompositeWeights::default(),
            num_scales: 10,
            base_scale_frames: 4.0,
            duration_smoothing: 5,
            aggregation: Aggregation::Max,
            padding: Padding::ZeroContext,
        }
    }
}

impl WaveletConfig {
    pub fn scales(&self) -> Vec<f64> {
        (0..self.num_scales).map(|k| self.base_scale_frames * 2f64.powi(k as i32)).collect()
    }
}
