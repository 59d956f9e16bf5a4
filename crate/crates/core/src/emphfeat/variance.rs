use serde::{Deserialize, Serialize};

use crate::datamodel::AlignedUtterance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceFeatures {
    /// Word log-pitch spread minus sentence log-pitch spread.
    pub pitch_var: f64,
    /// Word mean phone duration minus sentence mean phone duration (frames).
    pub dur_var: f64,
}

/// Percentile `p` (0..=100) of sorted data, interpolating linearly between
/// order statistics at position `p/100 * (n-1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// P95 - P5 of log-pitch; 0 for fewer than two values.
fn spread(mut log_pitch: Vec<f64>) -> f64 {
    if log_pitch.len() < 2 {
        return 0.0;
    }
    log_pitch.sort_by(f64::total_cmp);
    percentile(&log_pitch, 95.0) - percentile(&log_pitch, 5.0)
}

/// Word-minus-sentence pitch spread and phone duration for every word.
///
/// The sentence is the union of all words, so pause phones outside words do
/// not enter either statistic.
pub fn variance_features(utt: &AlignedUtterance) -> Result<Vec<VarianceFeatures>> {
    if utt.words.is_empty() {
        return Ok(Vec::new());
    }
    let word_log_pitch = |w: usize| -> Vec<f64> {
        utt.word_frames(w).filter(|&t| utt.is_voiced(t)).map(|t| utt.pitch_hz[t].ln()).collect()
    };
    let per_word_pitch: Vec<Vec<f64>> = (0..utt.words.len()).map(word_log_pitch).collect();
    let sentence_pitch: Vec<f64> = per_word_pitch.iter().flatten().copied().collect();
    if sentence_pitch.is_empty() {
        return Err(Error::NoVoicedFrames(utt.id.clone()));
    }
    let sentence_spread = spread(sentence_pitch);

    let (mut total, mut count) = (0.0, 0usize);
    for w in &utt.words {
        for p in &utt.phones[w.phone_range()] {
            total += p.num_frames as f64;
            count += 1;
        }
    }
    let sentence_dur = total / count as f64;

    Ok(utt
        .words
        .iter()
        .zip(per_word_pitch)
        .map(|(w, lp)| {
            let phones = &utt.phones[w.phone_range()];
            let word_dur = phones.iter().map(|p| p.num_frames as f64).sum::<f64>() / phones.len() as f64;
            VarianceFeatures { pitch_var: spread(lp) - sentence_spread, dur_var: word_dur - sentence_dur }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::fixtures::utterance;

    #[test]
    fn flat_utterance_has_zero_features() {
        let u = utterance(&[&[7, 7], &[7, 7, 7], &[7]], 140.0, 60.0);
        for f in variance_features(&u).unwrap() {
            assert_eq!((f.pitch_var, f.dur_var), (0.0, 0.0));
        }
    }

    #[test]
    fn duration_deviation_arithmetic() {
        let u = utterance(&[&[10, 10], &[20, 20]], 140.0, 60.0);
        let f = variance_features(&u).unwrap();
        assert_eq!((f[0].dur_var, f[1].dur_var), (-5.0, 5.0));
    }

    #[test]
    fn uniform_log_pitch_grid_has_spread_point_nine() {
        let mut u = utterance(&[&[101]], 100.0, 60.0);
        for (k, p) in u.pitch_hz.iter_mut().enumerate() {
            *p = 100.0 * (k as f64 / 100.0).exp();
        }
        let lp: Vec<f64> = u.pitch_hz.iter().map(|p| p.ln()).collect();
        assert!((spread(lp) - 0.9).abs() < 1e-12);
        let f = variance_features(&u).unwrap();
        assert_eq!(f[0].pitch_var, 0.0);
    }

    #[test]
    fn words_with_one_voiced_frame_get_negative_sentence_spread() {
        let mut u = utterance(&[&[10], &[10]], 100.0, 60.0);
        for t in 0..10 {
            u.pitch_hz[t] = 100.0 + 10.0 * t as f64;
        }
        u.pitch_hz[10..].iter_mut().for_each(|p| *p = 0.0);
        u.pitch_hz[15] = 150.0;
        let f = variance_features(&u).unwrap();
        let mut all: Vec<f64> = (0..10).map(|t| (100.0 + 10.0 * t as f64).ln()).collect();
        all.push(150f64.ln());
        let s = spread(all);
        assert!((f[1].pitch_var + s).abs() < 1e-12);
    }

    #[test]
    fn unvoiced_sentence_is_an_error() {
        let u = utterance(&[&[10]], 0.0, 60.0);
        assert!(matches!(variance_features(&u), Err(Error::NoVoicedFrames(_))));
    }

    #[test]
    fn percentile_interpolates() {
        let d = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&d, 0.0), 1.0);
        assert_eq!(percentile(&d, 100.0), 5.0);
        assert!((percentile(&d, 95.0) - 4.8).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 5.0), 7.0);
    }
}
