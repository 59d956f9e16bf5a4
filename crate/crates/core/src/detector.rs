//! Two-level quantization of a per-word feature, F-score against annotations,
//! and the grid search over wavelet feature settings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cwt::{
    extract_loma, prosody_streams, word_prominence, Aggregation, CompositeWeights, Padding, StreamScaleograms,
    WaveletConfig,
};
use crate::datamodel::AlignedUtterance;
use crate::emphfeat::percentile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub predictions: Vec<bool>,
    /// `[low, high]`.
    pub centroids: [f64; 2],
    pub threshold: f64,
}

/// One-dimensional k-means with two clusters.
///
/// Centroids start at the 5th and 95th percentiles (or the extremes when those
/// coincide) and Lloyd steps run until the partition stops changing. A word is
/// predicted emphasized when its value is at least the midpoint of the final
/// centroids. The input is sorted first, so the result does not depend on
/// word order.
pub fn kmeans2(values: &[f64]) -> Result<DetectorResult> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("k-means input contains non-finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (Some(&min), Some(&max)) = (sorted.first(), sorted.last()) else {
        return Err(Error::Degenerate("k-means needs at least two distinct values, got none".into()));
    };
    if min == max {
        return Err(Error::Degenerate(format!("all {} values equal {min}; nothing to separate", values.len())));
    }
    let (mut lo, mut hi) = (percentile(&sorted, 5.0), percentile(&sorted, 95.0));
    if lo == hi {
        (lo, hi) = (min, max);
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let mut split = usize::MAX;
    loop {
        let threshold = 0.5 * (lo + hi);
        let next = sorted.partition_point(|&v| v < threshold);
        if next == split {
            break;
        }
        split = next;
        // Both sides stay non-empty: min < threshold <= max throughout.
        lo = mean(&sorted[..split]);
        hi = mean(&sorted[split..]);
    }
    let threshold = 0.5 * (lo + hi);
    Ok(DetectorResult { predictions: values.iter().map(|&v| v >= threshold).collect(), centroids: [lo, hi], threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f_score(predictions: &[bool], annotations: &[bool]) -> Result<FScore> {
    if predictions.len() != annotations.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions but {} annotations",
            predictions.len(),
            annotations.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &a) in predictions.iter().zip(annotations) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(FScore { precision, recall, f1 })
}

/// Values and annotations of the annotated words only.
pub fn annotated_pairs(corpus: &[AlignedUtterance], values: &[Vec<f64>]) -> (Vec<f64>, Vec<bool>) {
    let mut v = Vec::new();
    let mut a = Vec::new();
    for (utt, vals) in corpus.iter().zip(values) {
        for (w, &x) in utt.words.iter().zip(vals) {
            if let Some(e) = w.emphasized {
                v.push(x);
                a.push(e);
            }
        }
    }
    (v, a)
}

/// Quantize and score one feature against the corpus annotations.
pub fn evaluate(corpus: &[AlignedUtterance], values: &[Vec<f64>]) -> Result<(DetectorResult, FScore)> {
    let (v, a) = annotated_pairs(corpus, values);
    let det = kmeans2(&v)?;
    let f = f_score(&det.predictions, &a)?;
    Ok((det, f))
}

/// Search space of the wavelet feature tuner. Configurations are enumerated
/// weights-major, then scales, smoothing and aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneGrid {
    pub weights: Vec<CompositeWeights>,
    pub num_scales: Vec<usize>,
    pub duration_smoothing: Vec<usize>,
    pub aggregations: Vec<Aggregation>,
    pub base_scale_frames: f64,
    pub padding: Padding,
}

/// Points of the 3-simplex with step `1/steps`, pitch weight descending, then
/// energy weight descending.
pub fn simplex_grid(steps: u32) -> Vec<CompositeWeights> {
    let d = steps as f64;
    let mut out = Vec::new();
    for i in (0..=steps).rev() {
        for j in (0..=steps - i).rev() {
            out.push(CompositeWeights::new(i as f64 / d, j as f64 / d, (steps - i - j) as f64 / d));
        }
    }
    out
}

impl Default for TuneGrid {
    fn default() -> Self {
        let base = WaveletConfig::default();
        TuneGrid {
            weights: simplex_grid(4),
            num_scales: vec![6, 10],
            duration_smoothing: vec![3, 5, 9],
            aggregations: vec![Aggregation::Max, Aggregation::Sum],
            base_scale_frames: base.base_scale_frames,
            padding: base.padding,
        }
    }
}

impl TuneGrid {
    pub fn single(cfg: &WaveletConfig) -> Self {
        TuneGrid {
            weights: vec![cfg.weights],
            num_scales: vec![cfg.num_scales],
            duration_smoothing: vec![cfg.duration_smoothing],
            aggregations: vec![cfg.aggregation],
            base_scale_frames: cfg.base_scale_frames,
            padding: cfg.padding,
        }
    }

    pub fn configs(&self) -> Vec<WaveletConfig> {
        let mut out = Vec::new();
        for &weights in &self.weights {
            for &num_scales in &self.num_scales {
                for &duration_smoothing in &self.duration_smoothing {
                    for &aggregation in &self.aggregations {
                        out.push(WaveletConfig {
                            weights,
                            num_scales,
                            base_scale_frames: self.base_scale_frames,
                            duration_smoothing,
                            aggregation,
                            padding: self.padding,
                        });
                    }
                }
            }
        }
        out
    }

    fn check(&self) -> Result<()> {
        if self.weights.is_empty()
            || self.num_scales.is_empty()
            || self.duration_smoothing.is_empty()
            || self.aggregations.is_empty()
        {
            return Err(Error::InvalidInput("tuning grid has an empty axis".into()));
        }
        if self.num_scales.iter().any(|&n| n < 2) {
            return Err(Error::InvalidInput("every scale count must be at least 2".into()));
        }
        if self.weights.iter().any(|w| w.pitch < 0.0 || w.energy < 0.0 || w.duration < 0.0) {
            return Err(Error::InvalidInput("composite weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneEntry {
    pub config: WaveletConfig,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// `None` when the feature was constant over the annotated words.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub entries: Vec<TuneEntry>,
    pub best_index: usize,
    pub best: WaveletConfig,
    pub best_f1: f64,
    pub annotated_words: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Wavelet feature of every word for every grid configuration, indexed
/// `[config][word]`.
///
/// Stream scaleograms are computed once per utterance at the largest scale
/// count (scales are per-row independent, so fewer scales is a truncation)
/// and mixed per configuration.
fn utterance_grid_values(utt: &AlignedUtterance, grid: &TuneGrid) -> Result<Vec<Vec<f64>>> {
    let max_scales = *grid.num_scales.iter().max().expect("checked non-empty");
    let need_duration = grid.weights.iter().any(|w| w.duration != 0.0);
    let mut per_smoothing: Vec<StreamScaleograms> = Vec::with_capacity(grid.duration_smoothing.len());
    for (i, &s) in grid.duration_smoothing.iter().enumerate() {
        let streams = prosody_streams(utt, s)?;
        let sgs = match per_smoothing.first() {
            // Pitch and energy streams do not depend on the smoothing width.
            Some(first) if i > 0 => StreamScaleograms {
                pitch: first.pitch.clone(),
                energy: first.energy.clone(),
                duration: if need_duration {
                    Some(crate::cwt::cwt_transform_with(&streams.duration, max_scales, grid.base_scale_frames, grid.padding)?)
                } else {
                    None
                },
            },
            _ => StreamScaleograms::compute(&streams, max_scales, grid.base_scale_frames, grid.padding, need_duration)?,
        };
        per_smoothing.push(sgs);
    }

    let mut out = Vec::new();
    for w in &grid.weights {
        for &n in &grid.num_scales {
            for sgs in &per_smoothing {
                let lines = extract_loma(&sgs.combine(w, n));
                for &agg in &grid.aggregations {
                    out.push(word_prominence(&lines, utt, agg));
                }
            }
        }
    }
    Ok(out)
}

/// Exhaustive search for the wavelet configuration whose quantized feature
/// best matches the annotations. Ties keep the earlier configuration.
pub fn tune(corpus: &[AlignedUtterance], grid: &TuneGrid) -> Result<TuneReport> {
    grid.check()?;
    let labels: Vec<bool> = corpus.iter().flat_map(|u| u.words.iter().filter_map(|w| w.emphasized)).collect();
    if !labels.contains(&true) || !labels.contains(&false) {
        return Err(Error::InvalidInput("annotations must contain both emphasized and plain words".into()));
    }
    let configs = grid.configs();
    let per_utt: Vec<Vec<Vec<f64>>> =
        corpus.par_iter().map(|u| utterance_grid_values(u, grid)).collect::<Result<_>>()?;

    let entries: Vec<TuneEntry> = configs
        .into_par_iter()
        .enumerate()
        .map(|(c, config)| {
            let values: Vec<Vec<f64>> = per_utt.iter().map(|v| v[c].clone()).collect();
            match evaluate(corpus, &values) {
                Ok((det, f)) => TuneEntry {
                    config,
                    f1: f.f1,
                    precision: f.precision,
                    recall: f.recall,
                    threshold: Some(det.threshold),
                },
                Err(_) => TuneEntry { config, f1: 0.0, precision: 0.0, recall: 0.0, threshold: None },
            }
        })
        .collect();

    let mut best_index = 0;
    for (i, e) in entries.iter().enumerate() {
        if e.f1 > entries[best_index].f1 {
            best_index = i;
        }
    }
    Ok(TuneReport {
        best: entries[best_index].config.clone(),
        best_f1: entries[best_index].f1,
        best_index,
        entries,
        annotated_words: labels.len(),
        config_hash: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::fixtures::utterance;
    use crate::emphfeat::wavelet_feature;

    #[test]
    fn lloyd_fixed_points() {
        let r = kmeans2(&[0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.centroids, [0.0, 1.0]);
        assert_eq!(r.threshold, 0.5);
        assert_eq!(r.predictions, [false, false, false, true, true]);

        assert_eq!(kmeans2(&[1.0, -1.0]).unwrap().centroids, [-1.0, 1.0]);

        let r = kmeans2(&[0.0, 0.1, 0.9, 1.0]).unwrap();
        assert!((r.threshold - 0.5).abs() < 1e-12);
        assert!((r.centroids[0] - 0.05).abs() < 1e-12 && (r.centroids[1] - 0.95).abs() < 1e-12);
        assert_eq!(r.predictions, [false, false, true, true]);
    }

    #[test]
    fn kmeans_needs_spread() {
        assert!(matches!(kmeans2(&[2.0; 5]), Err(Error::Degenerate(_))));
        assert!(matches!(kmeans2(&[]), Err(Error::Degenerate(_))));
        assert!(kmeans2(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn lloyd_moves_away_from_percentile_start() {
        // One outlier: the start splits it off, and the split is stable.
        let r = kmeans2(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.0]).unwrap();
        assert_eq!(r.centroids, [0.0, 10.0]);
        let r = kmeans2(&[0.0, 1.0, 2.0, 3.0, 10.0, 11.0]).unwrap();
        assert_eq!(r.centroids, [1.5, 10.5]);
    }

    #[test]
    fn f_score_examples() {
        let a = [true, false, true, false];
        assert_eq!(f_score(&a, &a).unwrap().f1, 1.0);
        let f = f_score(&[true, true, true, false], &[true, true, false, true]).unwrap();
        assert!((f.precision - 2.0 / 3.0).abs() < 1e-15 && (f.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f_score(&[false, false], &[true, false]).unwrap().f1, 0.0);
        assert!(f_score(&[true], &[true, false]).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let g = TuneGrid::default();
        assert_eq!(g.weights.len(), 15);
        assert_eq!(g.weights[0], CompositeWeights::new(1.0, 0.0, 0.0));
        assert_eq!(g.configs().len(), 15 * 2 * 3 * 2);
        assert_eq!(g.configs()[1].aggregation, Aggregation::Sum);
    }

    fn bumped(emph: usize) -> AlignedUtterance {
        let mut u = utterance(&[&[8, 8, 8], &[8, 8, 8], &[8, 8, 8], &[8, 8, 8]], 120.0, 60.0);
        for t in 0..u.pitch_hz.len() {
            let c = 24.0 * emph as f64 + 12.0;
            u.pitch_hz[t] = 120.0 * (1.0 + 0.4 * (-(t as f64 - c).powi(2) / 40.0).exp());
            u.energy_db[t] = 60.0 + (t as f64 * 1.3).sin();
        }
        for (i, w) in u.words.iter_mut().enumerate() {
            w.emphasized = Some(i == emph);
        }
        u
    }

    #[test]
    fn grid_values_match_direct_extraction() {
        let u = bumped(2);
        let grid = TuneGrid {
            weights: vec![CompositeWeights::new(0.5, 0.25, 0.25), CompositeWeights::new(1.0, 0.0, 0.0)],
            num_scales: vec![6, 10],
            duration_smoothing: vec![3, 9],
            ..TuneGrid::default()
        };
        let vals = utterance_grid_values(&u, &grid).unwrap();
        for (c, cfg) in grid.configs().iter().enumerate() {
            let direct = wavelet_feature(&u, cfg).unwrap();
            for (a, b) in vals[c].iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "config {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn single_config_grid() {
        let corpus: Vec<_> = (0..4).map(bumped).collect();
        let cfg = WaveletConfig::default();
        let r = tune(&corpus, &TuneGrid::single(&cfg)).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.best, cfg);
    }

    #[test]
    fn pitch_only_bumps_are_found() {
        let corpus: Vec<_> = (0..8).map(|i| bumped(i % 4)).collect();
        let r = tune(&corpus, &TuneGrid::default()).unwrap();
        assert_eq!(r.best.weights.pitch, 1.0);
        assert_eq!(r.best_f1, 1.0);
        assert!(r.entries.iter().all(|e| e.f1 <= r.best_f1));
        let again = tune(&corpus, &TuneGrid::default()).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn unannotated_corpus_is_rejected() {
        let mut u = bumped(1);
        u.words.iter_mut().for_each(|w| w.emphasized = None);
        assert!(tune(&[u], &TuneGrid::default()).is_err());
    }
}
