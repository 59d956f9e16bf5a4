//! Frame-level signal analysis: pre-emphasis, STFT power spectra, frame
//! energy, Mel filterbanks and a baseline autocorrelation pitch tracker.

mod mel;
mod pitch;

pub use mel::{filterbank_to_csv, hz_to_mel, log_mel, mel_filterbank, mel_to_hz, MelConfig};
pub use pitch::{estimate_pitch_acf, PitchConfig};

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::AudioBuffer;

/// Floor added before taking the log of frame energy.
pub const ENERGY_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    /// Defaults to the next power of two at or above the frame length.
    pub fft_size: Option<usize>,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { frame_length_ms: 25.0, frame_shift_ms: 10.0, fft_size: None }
    }
}

impl StftConfig {
    pub fn frame_samples(&self, sample_rate_hz: u32) -> usize {
        (self.frame_length_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        (self.frame_shift_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn fft_size(&self, sample_rate_hz: u32) -> usize {
        self.fft_size.unwrap_or_else(|| self.frame_samples(sample_rate_hz).next_power_of_two())
    }

    /// `1 + floor((n - frame) / hop)`, or 0 when the signal is shorter than a frame.
    pub fn num_frames(&self, num_samples: usize, sample_rate_hz: u32) -> usize {
        let frame = self.frame_samples(sample_rate_hz);
        let hop = self.hop_samples(sample_rate_hz);
        if num_samples < frame || hop == 0 {
            0
        } else {
            1 + (num_samples - frame) / hop
        }
    }

    pub fn check(&self, sample_rate_hz: u32) -> Result<()> {
        let frame = self.frame_samples(sample_rate_hz);
        let hop = self.hop_samples(sample_rate_hz);
        let fft = self.fft_size(sample_rate_hz);
        if frame == 0 || hop == 0 {
            return Err(Error::InvalidInput("frame length and shift must cover at least one sample".into()));
        }
        if hop > frame {
            return Err(Error::InvalidInput(format!("frame shift {hop} exceeds frame length {frame} samples")));
        }
        if fft < frame || !fft.is_power_of_two() {
            return Err(Error::InvalidInput(format!("fft size {fft} must be a power of two >= {frame}")));
        }
        Ok(())
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

/// `y[0] = x[0]`, `y[n] = x[n] - alpha * x[n-1]`.
pub fn pre_emphasize(samples: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut prev = None;
    for &x in samples {
        out.push(match prev {
            None => x,
            Some(p) => x - alpha * p,
        });
        prev = Some(x);
    }
    out
}

/// Hann-windowed power spectra, one row of `fft_size / 2 + 1` bins per frame.
/// Frames are zero-padded up to the FFT size.
pub fn stft_power(samples: &[f64], sample_rate_hz: u32, cfg: &StftConfig) -> Result<Vec<Vec<f64>>> {
    cfg.check(sample_rate_hz)?;
    let frame = cfg.frame_samples(sample_rate_hz);
    let hop = cfg.hop_samples(sample_rate_hz);
    let n_fft = cfg.fft_size(sample_rate_hz);
    let window = hann_window(frame);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];

    let frames = cfg.num_frames(samples.len(), sample_rate_hz);
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let seg = &samples[f * hop..f * hop + frame];
        for (slot, (x, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *slot = Complex::new(x * w, 0.0);
        }
        buf[frame..].iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        out.push(buf[..=n_fft / 2].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(out)
}

/// `10 log10(sum of bins + 1e-10)` per frame.
pub fn frame_energy_db(power: &[Vec<f64>]) -> Vec<f64> {
    power.iter().map(|frame| 10.0 * (frame.iter().sum::<f64>() + ENERGY_EPSILON).log10()).collect()
}

/// Per-frame pitch and energy tracks computed from raw audio.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTracks {
    pub pitch_hz: Vec<f64>,
    pub energy_db: Vec<f64>,
}

pub fn frame_tracks(audio: &AudioBuffer, stft: &StftConfig, pitch: &PitchConfig) -> Result<FrameTracks> {
    let power = stft_power(&audio.samples, audio.sample_rate_hz, stft)?;
    let energy_db = frame_energy_db(&power);
    let mut pitch_hz = estimate_pitch_acf(&audio.samples, audio.sample_rate_hz, pitch)?;
    pitch_hz.resize(energy_db.len(), 0.0);
    Ok(FrameTracks { pitch_hz, energy_db })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, sr: u32, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / sr as f64).sin()).collect()
    }

    #[test]
    fn pre_emphasis_arithmetic() {
        let y = pre_emphasize(&[1.0, 1.0, 1.0], 0.97);
        assert_eq!(y[0], 1.0);
        assert!((y[1] - 0.03).abs() < 1e-12 && (y[2] - 0.03).abs() < 1e-12);
        assert_eq!(pre_emphasize(&[0.3, -0.2, 0.9], 0.0), vec![0.3, -0.2, 0.9]);
        assert_eq!(pre_emphasize(&[0.0; 4], 0.97), vec![0.0; 4]);
        assert!(pre_emphasize(&[], 0.97).is_empty());
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let cfg = StftConfig { fft_size: Some(1024), ..Default::default() };
        let spec = stft_power(&sine(1000.0, 24_000, 4800), 24_000, &cfg).unwrap();
        assert_eq!(spec.len(), 1 + (4800 - 600) / 240);
        for frame in &spec {
            let argmax = frame.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(argmax, 43);
        }
    }

    #[test]
    fn zero_signal_has_zero_spectrum() {
        let spec = stft_power(&vec![0.0; 2400], 24_000, &StftConfig::default()).unwrap();
        assert!(spec.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn short_audio_gives_no_frames() {
        assert!(stft_power(&vec![0.1; 599], 24_000, &StftConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn windowed_parseval() {
        let sr = 24_000;
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..1200).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let spec = stft_power(&x, sr, &cfg).unwrap();
        let n_fft = cfg.fft_size(sr);
        let w = hann_window(cfg.frame_samples(sr));
        let hop = cfg.hop_samples(sr);
        for (f, frame) in spec.iter().enumerate() {
            // One-sided spectrum: interior bins stand for two conjugate bins.
            let full: f64 = frame[0] + frame[n_fft / 2] + 2.0 * frame[1..n_fft / 2].iter().sum::<f64>();
            let time: f64 = w.iter().enumerate().map(|(i, wi)| (wi * x[f * hop + i]).powi(2)).sum();
            let rel = (full - n_fft as f64 * time).abs() / (n_fft as f64 * time);
            assert!(rel <= 1e-6, "frame {f}: rel err {rel}");
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = StftConfig { fft_size: Some(256), ..Default::default() };
        assert!(stft_power(&[0.0; 1000], 24_000, &cfg).is_err());
        let cfg = StftConfig { frame_shift_ms: 30.0, ..Default::default() };
        assert!(stft_power(&[0.0; 1000], 24_000, &cfg).is_err());
    }

    #[test]
    fn energy_floor_and_log_identities() {
        let e = frame_energy_db(&[vec![0.0; 5], vec![0.25, 0.75], vec![0.5, 1.5]]);
        assert!((e[0] + 100.0).abs() < 1e-9);
        assert!(e[1].abs() < 1e-9);
        assert!((e[2] - e[1] - 10.0 * 2f64.log10()).abs() < 1e-9);
    }
}
