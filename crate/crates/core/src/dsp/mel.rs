use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub num_bands: usize,
    pub fmin_hz: f64,
    /// Defaults to the Nyquist frequency.
    pub fmax_hz: Option<f64>,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig { num_bands: 80, fmin_hz: 0.0, fmax_hz: None }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK Mel scale, `num_bands x (fft_size/2 + 1)`.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate_hz: u32, fft_size: usize) -> Result<Vec<Vec<f64>>> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    let fmax = cfg.fmax_hz.unwrap_or(nyquist);
    if cfg.num_bands == 0 || !(0.0 <= cfg.fmin_hz && cfg.fmin_hz < fmax && fmax <= nyquist) {
        return Err(Error::InvalidInput(format!(
            "mel config needs bands >= 1 and 0 <= fmin < fmax <= {nyquist}, got {cfg:?}"
        )));
    }
    let bins = fft_size / 2 + 1;
    let (mlo, mhi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..cfg.num_bands + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.num_bands + 1) as f64))
        .collect();
    let bin_hz = sample_rate_hz as f64 / fft_size as f64;
    let bank = (0..cfg.num_bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect();
    Ok(bank)
}

/// Natural-log Mel energies per frame, floored at `1e-10` before the log.
pub fn log_mel(power: &[Vec<f64>], bank: &[Vec<f64>]) -> Vec<Vec<f64>> {
    power
        .iter()
        .map(|frame| {
            bank.iter()
                .map(|filt| filt.iter().zip(frame).map(|(w, p)| w * p).sum::<f64>().max(1e-10).ln())
                .collect()
        })
        .collect()
}

/// One row per band: `band,bin0,bin1,...`.
pub fn filterbank_to_csv(bank: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for (b, row) in bank.iter().enumerate() {
        out.push_str(&b.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}
