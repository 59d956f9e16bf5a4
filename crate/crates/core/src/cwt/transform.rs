use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernels are truncated at this many scale widths on each side.
const HALF_SUPPORT_SCALES: f64 = 5.0;

/// Mexican-hat wavelet `(1 - t^2) exp(-t^2 / 2)`.
pub fn ricker(t: f64) -> f64 {
    let t2 = t * t;
    (1.0 - t2) * (-0.5 * t2).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Symmetric reflection at both edges. Requires the signal to be at least
    /// as long as the largest scale.
    Mirror,
    /// The signal is surrounded by zeros (the mean of a z-scored stream).
    ZeroContext,
}

/// Wavelet coefficients, one row per scale (fine to coarse).
#[derive(Debug, Clone, PartialEq)]
pub struct Scaleogram {
    pub coefficients: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

impl Scaleogram {
    pub fn num_frames(&self) -> usize {
        self.coefficients.first().map(Vec::len).unwrap_or(0)
    }

    /// `(scale index, frame, value)` of the largest coefficient.
    pub fn argmax(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (k, row) in self.coefficients.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                if best.is_none_or(|b| v > b.2) {
                    best = Some((k, t, v));
                }
            }
        }
        best
    }

    /// Keep only the first `n` scales.
    pub fn truncated(&self, n: usize) -> Scaleogram {
        let n = n.min(self.scales.len());
        Scaleogram { coefficients: self.coefficients[..n].to_vec(), scales: self.scales[..n].to_vec() }
    }
}

/// Header `scale,f0,f1,...` then one row per scale.
pub fn scaleogram_to_csv(sg: &Scaleogram) -> String {
    let mut out = String::from("scale");
    for t in 0..sg.num_frames() {
        out.push_str(&format!(",f{t}"));
    }
    out.push('\n');
    for (s, row) in sg.scales.iter().zip(&sg.coefficients) {
        out.push_str(&s.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

fn half_support(scale: f64) -> usize {
    (HALF_SUPPORT_SCALES * scale).ceil() as usize
}

/// Index into the half-sample symmetric extension of a length-`n` signal.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Ricker CWT at dyadic scales `base * 2^k` with mirror padding, each scale
/// normalized by `s^(-1/2)`.
pub fn cwt_transform(signal: &[f64], num_scales: usize, base_scale_frames: f64) -> Result<Scaleogram> {
    cwt_transform_with(signal, num_scales, base_scale_frames, Padding::Mirror)
}

pub fn cwt_transform_with(
    signal: &[f64],
    num_scales: usize,
    base_scale_frames: f64,
    padding: Padding,
) -> Result<Scaleogram> {
    if num_scales < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 scales, got {num_scales}")));
    }
    if !(base_scale_frames > 0.0) {
        return Err(Error::InvalidInput(format!("base scale must be positive, got {base_scale_frames}")));
    }
    let scales: Vec<f64> = (0..num_scales).map(|k| base_scale_frames * 2f64.powi(k as i32)).collect();
    let n = signal.len();
    let largest = scales[num_scales - 1].ceil() as usize;
    if padding == Padding::Mirror && n < largest.max(1) {
        return Err(Error::SignalTooShort { required: largest.max(1), actual: n });
    }
    if n == 0 {
        return Ok(Scaleogram { coefficients: vec![Vec::new(); num_scales], scales });
    }

    let coefficients = scales
        .iter()
        .map(|&s| {
            let half = half_support(s);
            let norm = s.powf(-0.5);
            let kernel: Vec<f64> = (-(half as isize)..=half as isize).map(|tau| norm * ricker(tau as f64 / s)).collect();
            match padding {
                Padding::ZeroContext => correlate_zero(signal, &kernel, half),
                Padding::Mirror => correlate_mirror(signal, &kernel, half),
            }
        })
        .collect();
    Ok(Scaleogram { coefficients, scales })
}

fn correlate_zero(x: &[f64], kernel: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n);
            // kernel[half + (u - t)]
            x[lo..hi].iter().zip(&kernel[half + lo - t..]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

fn correlate_mirror(x: &[f64], kernel: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    if kernel.len() <= 2 * n {
        return (0..n)
            .map(|t| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * x[reflect(t as isize + j as isize - half as isize, n)])
                    .sum()
            })
            .collect();
    }
    // The mirrored signal has period 2n, so fold the long kernel onto one period.
    let period = 2 * n;
    let mut folded = vec![0.0; period];
    for (j, k) in kernel.iter().enumerate() {
        folded[(j as isize - half as isize).rem_euclid(period as isize) as usize] += k;
    }
    (0..n)
        .map(|t| folded.iter().enumerate().map(|(j, k)| k * x[reflect(t as isize + j as isize, n)]).sum())
        .collect()
}

/// Scaleograms of the three prosody streams, kept apart so that any weighted
/// composite can be formed afterwards (the transform is linear).
#[derive(Debug, Clone)]
pub struct StreamScaleograms {
    pub pitch: Scaleogram,
    pub energy: Scaleogram,
    /// `None` when the duration stream was not needed.
    pub duration: Option<Scaleogram>,
}

impl StreamScaleograms {
    pub fn compute(
        streams: &super::ProsodyStreams,
        num_scales: usize,
        base_scale_frames: f64,
        padding: Padding,
        with_duration: bool,
    ) -> Result<Self> {
        let pitch = cwt_transform_with(&streams.pitch, num_scales, base_scale_frames, padding)?;
        let energy = cwt_transform_with(&streams.energy, num_scales, base_scale_frames, padding)?;
        let duration = if with_duration {
            Some(cwt_transform_with(&streams.duration, num_scales, base_scale_frames, padding)?)
        } else {
            None
        };
        Ok(StreamScaleograms { pitch, energy, duration })
    }

    /// Scaleogram of `w.pitch * P + w.energy * E + w.duration * D`, limited to
    /// the first `num_scales` scales.
    pub fn combine(&self, w: &super::CompositeWeights, num_scales: usize) -> Scaleogram {
        let n = num_scales.min(self.pitch.scales.len());
        let coefficients = (0..n)
            .map(|k| {
                let p = &self.pitch.coefficients[k];
                let e = &self.energy.coefficients[k];
                match (&self.duration, w.duration != 0.0) {
                    (Some(d), true) => p
                        .iter()
                        .zip(e)
                        .zip(&d.coefficients[k])
                        .map(|((p, e), d)| w.pitch * p + w.energy * e + w.duration * d)
                        .collect(),
                    _ => p.iter().zip(e).map(|(p, e)| w.pitch * p + w.energy * e).collect(),
                }
            })
            .collect();
        Scaleogram { coefficients, scales: self.pitch.scales[..n].to_vec() }
    }
}
