use serde::{Deserialize, Serialize};

use crate::datamodel::AlignedUtterance;

use super::Scaleogram;

/// Maxima below this fraction of the largest absolute coefficient are
/// treated as numerical noise.
const NOISE_FLOOR: f64 = 1e-9;

/// How line strengths inside one word are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Max,
    Sum,
}

/// A chain of local maxima linked from the finest scale upward.
#[derive(Debug, Clone, PartialEq)]
pub struct ProminenceLine {
    /// `(scale index, frame, coefficient)`, one per consecutive scale.
    pub points: Vec<(usize, usize, f64)>,
    pub strength: f64,
    pub anchor_frame: usize,
}

/// Positive interior local maxima of one scale row (plateaus count once, at
/// their first frame).
pub fn local_maxima(row: &[f64], floor: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for t in 1..row.len().saturating_sub(1) {
        let v = row[t];
        if v > floor && v > row[t - 1] && v >= row[t + 1] {
            // A plateau must actually come back down to be a maximum.
            let mut end = t + 1;
            while end < row.len() && row[end] == v {
                end += 1;
            }
            if end < row.len() && row[end] < v {
                out.push(t);
            }
        }
    }
    out
}

/// Chain local maxima across scales. Every finest-scale maximum starts a line
/// that repeatedly links to the nearest maximum on the next coarser scale
/// within half that scale's width; ties pick the earlier frame. Lines that
/// share a coarse maximum are all kept.
pub fn extract_loma(sg: &Scaleogram) -> Vec<ProminenceLine> {
    let global = sg.coefficients.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if global == 0.0 || sg.coefficients.is_empty() {
        return Vec::new();
    }
    let floor = NOISE_FLOOR * global;
    let maxima: Vec<Vec<usize>> = sg.coefficients.iter().map(|row| local_maxima(row, floor)).collect();

    maxima[0]
        .iter()
        .map(|&t0| {
            let mut points = vec![(0, t0, sg.coefficients[0][t0])];
            let mut t = t0;
            for k in 1..sg.scales.len() {
                let window = sg.scales[k] / 2.0;
                let next = maxima[k]
                    .iter()
                    .copied()
                    .filter(|&m| (m as f64 - t as f64).abs() <= window)
                    .min_by_key(|&m| (m.abs_diff(t), m));
                match next {
                    Some(m) => {
                        points.push((k, m, sg.coefficients[k][m]));
                        t = m;
                    }
                    None => break,
                }
            }
            let strength = points.iter().map(|p| p.2).sum();
            ProminenceLine { points, strength, anchor_frame: t0 }
        })
        .collect()
}

/// Per-word prominence: lines are assigned to the word whose frame span holds
/// their anchor, then merged by `aggregation`. Words without lines get 0;
/// lines anchored outside every word are dropped.
pub fn word_prominence(lines: &[ProminenceLine], utt: &AlignedUtterance, aggregation: Aggregation) -> Vec<f64> {
    let spans: Vec<_> = (0..utt.words.len()).map(|w| utt.word_frames(w)).collect();
    let mut out: Vec<Option<f64>> = vec![None; spans.len()];
    for line in lines {
        if let Some(w) = spans.iter().position(|s| s.contains(&line.anchor_frame)) {
            out[w] = Some(match (out[w], aggregation) {
                (None, _) => line.strength,
                (Some(v), Aggregation::Max) => v.max(line.strength),
                (Some(v), Aggregation::Sum) => v + line.strength,
            });
        }
    }
    out.into_iter().map(|v| v.unwrap_or(0.0)).collect()
}
