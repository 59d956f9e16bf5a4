use serde::{Deserialize, Serialize};

use crate::datamodel::{is_silence_label, AlignedUtterance};
use crate::error::{Error, Result};

/// Non-negative mixing weights of the z-scored prosody streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeWeights {
    pub pitch: f64,
    pub energy: f64,
    pub duration: f64,
}

impl Default for CompositeWeights {
    fn default() -> Self {
        CompositeWeights { pitch: 1.0, energy: 1.0, duration: 0.5 }
    }
}

impl CompositeWeights {
    pub fn new(pitch: f64, energy: f64, duration: f64) -> Self {
        CompositeWeights { pitch, energy, duration }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSignal {
    pub values: Vec<f64>,
    pub weights: CompositeWeights,
}

/// The three z-scored per-frame streams the composite is mixed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyStreams {
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    pub duration: Vec<f64>,
}

impl ProsodyStreams {
    pub fn combine(&self, w: &CompositeWeights) -> Vec<f64> {
        self.pitch
            .iter()
            .zip(&self.energy)
            .zip(&self.duration)
            .map(|((p, e), d)| w.pitch * p + w.energy * e + w.duration * d)
            .collect()
    }
}

/// Population z-score. A constant input maps to all zeros.
pub fn zscore(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Centered moving average; near the edges only the available frames count.
pub fn moving_average(values: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return values.to_vec();
    }
    let half_lo = (width - 1) / 2;
    let half_hi = width / 2;
    let mut prefix = vec![0.0; values.len() + 1];
    for (i, v) in values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half_lo);
            let hi = (i + half_hi + 1).min(values.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Log-pitch with unvoiced gaps linearly interpolated and edges held.
pub fn interpolated_log_pitch(utt: &AlignedUtterance) -> Result<Vec<f64>> {
    let voiced: Vec<(usize, f64)> =
        utt.pitch_hz.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, &p)| (i, p.ln())).collect();
    if voiced.is_empty() {
        return Err(Error::NoVoicedFrames(utt.id.clone()));
    }
    let mut out = vec![0.0; utt.pitch_hz.len()];
    let (first, last) = (voiced[0], voiced[voiced.len() - 1]);
    out[..=first.0].iter_mut().for_each(|v| *v = first.1);
    out[last.0..].iter_mut().for_each(|v| *v = last.1);
    for pair in voiced.windows(2) {
        let ((a, va), (b, vb)) = (pair[0], pair[1]);
        for (t, slot) in out.iter_mut().enumerate().take(b + 1).skip(a) {
            let frac = (t - a) as f64 / (b - a) as f64;
            *slot = va + frac * (vb - va);
        }
    }
    Ok(out)
}

/// Per-frame z-scored log-duration of the active phone, before smoothing.
/// Pause phones and frames outside phones stay at zero and are left out of
/// the statistics.
pub(crate) fn duration_stream(utt: &AlignedUtterance) -> Vec<f64> {
    let mut out = vec![0.0; utt.pitch_hz.len()];
    let speech: Vec<usize> = (0..utt.phones.len()).filter(|&i| !is_silence_label(&utt.phones[i].label)).collect();
    let logs: Vec<f64> = speech.iter().map(|&i| (utt.phones[i].num_frames as f64).ln()).collect();
    let z = zscore(&logs);
    for (&i, zv) in speech.iter().zip(z) {
        let p = &utt.phones[i];
        let end = p.end_frame().min(out.len());
        for slot in out.iter_mut().take(end).skip(p.start_frame) {
            *slot = zv;
        }
    }
    out
}

pub fn prosody_streams(utt: &AlignedUtterance, duration_smoothing: usize) -> Result<ProsodyStreams> {
    let pitch = zscore(&interpolated_log_pitch(utt)?);
    let energy = zscore(&utt.energy_db);
    let duration = moving_average(&duration_stream(utt), duration_smoothing);
    Ok(ProsodyStreams { pitch, energy, duration })
}

/// Weighted sum of the z-scored pitch, energy and (smoothed) duration streams.
pub fn build_composite(
    utt: &AlignedUtterance,
    weights: CompositeWeights,
    duration_smoothing: usize,
) -> Result<CompositeSignal> {
    if weights.pitch < 0.0 || weights.energy < 0.0 || weights.duration < 0.0 {
        return Err(Error::InvalidInput(format!("composite weights must be non-negative, got {weights:?}")));
    }
    let streams = prosody_streams(utt, duration_smoothing)?;
    Ok(CompositeSignal { values: streams.combine(&weights), weights })
}
