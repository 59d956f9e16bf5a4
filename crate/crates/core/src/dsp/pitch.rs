//! Normalized-autocorrelation pitch tracker.
//!
//! Frames sit on the same grid as the STFT (frame `i` starts at `i * hop`),
//! but each frame analyses a longer window so that two periods of the lowest
//! searched pitch fit. Samples past the end of the signal read as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchConfig {
    pub min_hz: f64,
    pub max_hz: f64,
    /// Minimum normalized autocorrelation peak for a frame to count as voiced.
    pub voicing_threshold: f64,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig { min_hz: 50.0, max_hz: 500.0, voicing_threshold: 0.5, frame_length_ms: 25.0, frame_shift_ms: 10.0 }
    }
}

/// Per-frame pitch in Hz, `0.0` for unvoiced frames.
pub fn estimate_pitch_acf(samples: &[f64], sample_rate_hz: u32, cfg: &PitchConfig) -> Result<Vec<f64>> {
    if !(cfg.min_hz > 0.0 && cfg.min_hz < cfg.max_hz) {
        return Err(Error::InvalidInput(format!("pitch range {}..{} Hz is empty", cfg.min_hz, cfg.max_hz)));
    }
    let sr = sample_rate_hz as f64;
    let frame = (cfg.frame_length_ms * sr / 1000.0).round() as usize;
    let hop = (cfg.frame_shift_ms * sr / 1000.0).round() as usize;
    if frame == 0 || hop == 0 {
        return Err(Error::InvalidInput("pitch frame and hop must cover at least one sample".into()));
    }
    let min_lag = ((sr / cfg.max_hz).floor() as usize).max(1);
    let max_lag = (sr / cfg.min_hz).ceil() as usize;
    let window = frame.max(2 * max_lag + 1);
    let frames = if samples.len() < frame { 0 } else { 1 + (samples.len() - frame) / hop };

    let mut buf = vec![0.0; window];
    let mut r = vec![0.0; max_lag + 2];
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let start = f * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = samples.get(start + i).copied().unwrap_or(0.0);
        }
        out.push(frame_pitch(&buf, min_lag, max_lag, sr, cfg.voicing_threshold, &mut r));
    }
    Ok(out)
}

fn frame_pitch(x: &[f64], min_lag: usize, max_lag: usize, sr: f64, threshold: f64, r: &mut [f64]) -> f64 {
    let n = x.len();
    // Prefix sums of squares give both energy terms of each lag in O(1).
    let mut sq = vec![0.0; n + 1];
    for i in 0..n {
        sq[i + 1] = sq[i] + x[i] * x[i];
    }
    if sq[n] == 0.0 {
        return 0.0;
    }
    let lo = min_lag.saturating_sub(1).max(1);
    let hi = (max_lag + 1).min(n - 1);
    for lag in lo..=hi {
        let m = n - lag;
        let cross: f64 = x[..m].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
        let denom = (sq[m] * (sq[n] - sq[lag])).sqrt();
        r[lag] = if denom > 0.0 { cross / denom } else { 0.0 };
    }
    let hi_search = max_lag.min(hi - 1);
    let best = (min_lag..=hi_search).map(|l| r[l]).fold(f64::NEG_INFINITY, f64::max);
    if !(best >= threshold) {
        return 0.0;
    }
    // Earliest local maximum close to the best one, to avoid octave drops.
    let lag = (min_lag..=hi_search)
        .find(|&l| r[l] >= 0.9 * best && r[l] >= r[l - 1] && r[l] >= r[l + 1])
        .unwrap_or(min_lag);
    let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
    let denom = a - 2.0 * b + c;
    let offset = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    sr / (lag as f64 + offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sawtooth(freq: f64, sr: u32, n: usize) -> Vec<f64> {
        (0..n).map(|i| 2.0 * ((freq * i as f64 / sr as f64).fract()) - 1.0).map(|v| 0.5 * v).collect()
    }

    #[test]
    fn sawtooth_pitch_is_recovered() {
        let x = sawtooth(100.0, 24_000, 24_000);
        let f0 = estimate_pitch_acf(&x, 24_000, &PitchConfig::default()).unwrap();
        assert_eq!(f0.len(), 1 + (24_000 - 600) / 240);
        // Frames near the end read zero padding but still hold several periods.
        for (i, &p) in f0.iter().enumerate() {
            assert!((p - 100.0).abs() <= 2.0, "frame {i}: {p}");
        }
    }

    #[test]
    fn other_pitches_are_recovered() {
        for f in [75.0, 180.0, 310.0] {
            let x = sawtooth(f, 24_000, 6000);
            let f0 = estimate_pitch_acf(&x, 24_000, &PitchConfig::default()).unwrap();
            let mid = f0[f0.len() / 2];
            assert!((mid - f).abs() <= 2.0, "{f}: {mid}");
        }
    }

    #[test]
    fn noise_is_mostly_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..24_000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let f0 = estimate_pitch_acf(&x, 24_000, &PitchConfig::default()).unwrap();
        let unvoiced = f0.iter().filter(|&&p| p == 0.0).count();
        assert!(unvoiced as f64 >= 0.9 * f0.len() as f64, "{unvoiced}/{}", f0.len());
    }

    #[test]
    fn silence_is_unvoiced() {
        let f0 = estimate_pitch_acf(&vec![0.0; 4800], 24_000, &PitchConfig::default()).unwrap();
        assert!(f0.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn delay_by_one_hop_shifts_by_one_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = sawtooth(140.0, 24_000, 7200).iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
        let mut delayed = vec![0.0; 240];
        delayed.extend_from_slice(&x);
        let cfg = PitchConfig::default();
        let a = estimate_pitch_acf(&x, 24_000, &cfg).unwrap();
        let b = estimate_pitch_acf(&delayed, 24_000, &cfg).unwrap();
        assert_eq!(b.len(), a.len() + 1);
        for i in 0..a.len() {
            assert!((a[i] - b[i + 1]).abs() <= 1e-6, "frame {i}");
        }
    }
}
