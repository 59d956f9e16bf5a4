//! Emphasis control by adding a bias to the predicted emphasis of selected
//! words, and the before/after analysis of the resulting prosody.

use std::ops::Range;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::AlignedUtterance;
use crate::error::{Error, Result};
use crate::neural::{PhoneInput, Prediction, PredictorModel, PROSODY_STREAMS};

pub const DEFAULT_BIAS_GRID: [f64; 8] = [-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0];

/// Words to push, and by how much, in normalized emphasis units. In variance
/// mode the same bias goes to both features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmphasisDirective {
    pub words: Vec<usize>,
    pub bias: f64,
}

impl EmphasisDirective {
    pub fn new(words: Vec<usize>, bias: f64) -> Self {
        EmphasisDirective { words, bias }
    }

    pub fn check(&self, num_words: usize) -> Result<()> {
        if !self.bias.is_finite() {
            return Err(Error::InvalidInput(format!("bias must be finite, got {}", self.bias)));
        }
        match self.words.iter().find(|&&w| w >= num_words) {
            Some(w) => Err(Error::InvalidInput(format!("word index {w} out of range ({num_words} words)"))),
            None => Ok(()),
        }
    }
}

/// Add the directive's bias to every phone of every listed word.
pub fn apply_bias(emphasis: &mut Array2<f64>, words: &[Range<usize>], directive: &EmphasisDirective) -> Result<()> {
    directive.check(words.len())?;
    if directive.bias == 0.0 {
        return Ok(());
    }
    for &w in &directive.words {
        let span = &words[w];
        if span.end > emphasis.nrows() {
            return Err(Error::InvalidInput(format!(
                "word {w} spans phones {span:?} but only {} were predicted",
                emphasis.nrows()
            )));
        }
        emphasis.slice_mut(ndarray::s![span.clone(), ..]).mapv_inplace(|v| v + directive.bias);
    }
    Ok(())
}

/// Hierarchical inference with an optional directive applied between the
/// emphasis and prosody predictors.
pub fn infer(model: &PredictorModel, input: &PhoneInput, directive: Option<&EmphasisDirective>) -> Result<Prediction> {
    match directive {
        None => model.infer(input),
        Some(d) => model.infer_with(input, |e| apply_bias(e, &input.words, d)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamDelta {
    pub delta_mean: f64,
    pub delta_std: f64,
}

/// Prosody changes caused by one bias level, averaged over utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub bias: f64,
    /// Indexed like [`PROSODY_STREAMS`]: duration (frames), pitch (Hz),
    /// energy (dB).
    pub streams: [StreamDelta; 3],
    pub n_words: usize,
}

impl DeltaReport {
    pub fn stream(&self, name: &str) -> Option<StreamDelta> {
        PROSODY_STREAMS.iter().position(|s| *s == name).map(|i| self.streams[i])
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn streams(p: &Prediction, phones: &[usize]) -> [Vec<f64>; 3] {
    [
        phones.iter().map(|&i| p.log_duration[i].exp()).collect(),
        phones.iter().map(|&i| p.pitch_hz[i]).collect(),
        phones.iter().map(|&i| p.energy_db[i]).collect(),
    ]
}

/// Words an analysis run pushes in one utterance: the annotated emphasized
/// words.
pub fn annotated_targets(utt: &AlignedUtterance) -> Vec<usize> {
    utt.words.iter().enumerate().filter(|(_, w)| w.emphasized == Some(true)).map(|(i, _)| i).collect()
}

/// For every bias level, infer each utterance with and without the bias on
/// its annotated emphasized words and average the change in per-phone mean
/// and standard deviation over those words' phones. Utterances without an
/// emphasized word are skipped.
pub fn analyze_deltas(model: &PredictorModel, corpus: &[AlignedUtterance], biases: &[f64]) -> Result<Vec<DeltaReport>> {
    let mut jobs = Vec::new();
    for utt in corpus {
        let words = annotated_targets(utt);
        if words.is_empty() {
            continue;
        }
        let input = model.input_for(utt)?;
        let phones: Vec<usize> = words.iter().flat_map(|&w| input.words[w].clone()).collect();
        if phones.is_empty() {
            continue;
        }
        jobs.push((input, words, phones));
    }
    if jobs.is_empty() {
        return Err(Error::InvalidInput("no utterance has an annotated emphasized word".into()));
    }
    let baselines = jobs
        .par_iter()
        .map(|(input, _, phones)| Ok(streams(&model.infer(input)?, phones)))
        .collect::<Result<Vec<_>>>()?;
    let n_words: usize = jobs.iter().map(|(_, w, _)| w.len()).sum();
    biases
        .par_iter()
        .map(|&bias| {
            let mut sums = [[0.0; 2]; 3];
            for ((input, words, phones), before) in jobs.iter().zip(&baselines) {
                let directive = EmphasisDirective::new(words.clone(), bias);
                let after = streams(&infer(model, input, Some(&directive))?, phones);
                for s in 0..3 {
                    let (m0, s0) = mean_std(&before[s]);
                    let (m1, s1) = mean_std(&after[s]);
                    sums[s][0] += m1 - m0;
                    sums[s][1] += s1 - s0;
                }
            }
            let n = jobs.len() as f64;
            // `+ 0.0` turns a negative zero into zero.
            let streams = sums.map(|[m, s]| StreamDelta { delta_mean: m / n + 0.0, delta_std: s / n + 0.0 });
            Ok(DeltaReport { bias, streams, n_words })
        })
        .collect()
}

/// `bias,stream,delta_mean,delta_std,n_words`, one row per bias and stream.
pub fn deltas_to_csv(reports: &[DeltaReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bias", "stream", "delta_mean", "delta_std", "n_words"]).map_err(csv_error)?;
    for r in reports {
        for (name, d) in PROSODY_STREAMS.iter().zip(&r.streams) {
            w.write_record([
                r.bias.to_string(),
                name.to_string(),
                d.delta_mean.to_string(),
                d.delta_std.to_string(),
                r.n_words.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spans() -> Vec<Range<usize>> {
        vec![0..2, 2..5, 5..6]
    }

    #[test]
    fn bias_touches_only_listed_words() {
        let base = Array2::from_shape_fn((6, 1), |(i, _)| i as f64 * 0.1);
        let mut e = base.clone();
        apply_bias(&mut e, &spans(), &EmphasisDirective::new(vec![1], 0.75)).unwrap();
        for i in 0..6 {
            let want = if (2..5).contains(&i) { base[[i, 0]] + 0.75 } else { base[[i, 0]] };
            assert_eq!(e[[i, 0]], want);
        }
        let mut e = base.clone();
        apply_bias(&mut e, &spans(), &EmphasisDirective::new(vec![1], -0.5)).unwrap();
        assert!((2..5).all(|i| e[[i, 0]] < base[[i, 0]]));
    }

    #[test]
    fn zero_bias_is_identity() {
        let base = array![[-0.0, 1.0], [2.0, 3.0], [0.5, 0.5], [1.0, 1.0], [0.0, 0.0], [9.0, 9.0]];
        let mut e = base.clone();
        apply_bias(&mut e, &spans(), &EmphasisDirective::new(vec![0, 2], 0.0)).unwrap();
        assert_eq!(e, base);
    }

    #[test]
    fn variance_mode_bias_hits_both_columns() {
        let mut e = Array2::zeros((6, 2));
        apply_bias(&mut e, &spans(), &EmphasisDirective::new(vec![2], 0.5)).unwrap();
        assert_eq!(e.row(5).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn out_of_range_word_is_rejected() {
        let mut e = Array2::zeros((6, 1));
        assert!(apply_bias(&mut e, &spans(), &EmphasisDirective::new(vec![3], 1.0)).is_err());
        assert!(apply_bias(&mut e, &spans(), &EmphasisDirective::new(vec![0], f64::NAN)).is_err());
    }

    #[test]
    fn csv_layout() {
        let d = StreamDelta { delta_mean: 0.0, delta_std: 0.0 };
        let csv = deltas_to_csv(&[DeltaReport { bias: 0.5, streams: [d; 3], n_words: 4 }]).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "bias,stream,delta_mean,delta_std,n_words");
        assert_eq!(lines[1], "0.5,duration,0,0,4");
        assert_eq!(lines.len(), 4);
    }

    use crate::neural::fixtures::{synthetic_set, tiny_config};
    use crate::neural::{make_synthetic_corpus, EmphasisMode};

    fn model(mode: EmphasisMode) -> PredictorModel {
        let set = synthetic_set(11, 3, mode);
        PredictorModel::new(tiny_config(mode), set.vocab, set.stats).unwrap()
    }

    #[test]
    fn bias_leaves_other_words_bitwise_unchanged() {
        let corpus = make_synthetic_corpus(11, 3);
        for mode in [EmphasisMode::Variance, EmphasisMode::Wavelet, EmphasisMode::Combined] {
            let m = model(mode);
            for utt in &corpus {
                let input = m.input_for(utt).unwrap();
                let plain = infer(&m, &input, None).unwrap();
                let d = EmphasisDirective::new(vec![1], 0.75);
                let pushed = infer(&m, &input, Some(&d)).unwrap();
                for i in 0..input.ids.len() {
                    let inside = input.words[1].contains(&i);
                    let same = plain.log_duration[i] == pushed.log_duration[i]
                        && plain.pitch_hz[i] == pushed.pitch_hz[i]
                        && plain.energy_db[i] == pushed.energy_db[i];
                    assert!(inside || same, "{mode:?} phone {i}");
                }
                assert!(input.words[1].clone().any(|i| plain.pitch_hz[i] != pushed.pitch_hz[i]));
            }
        }
    }

    #[test]
    fn opposite_biases_cancel() {
        let m = model(EmphasisMode::Variance);
        let input = m.input_for(&make_synthetic_corpus(11, 1)[0]).unwrap();
        let enc = m.encode(&input.ids).unwrap();
        let e = m.predict_emphasis(enc.view());
        let mut x = e.clone();
        apply_bias(&mut x, &input.words, &EmphasisDirective::new(vec![0, 2], 0.5)).unwrap();
        apply_bias(&mut x, &input.words, &EmphasisDirective::new(vec![0, 2], -0.5)).unwrap();
        // Exact only when `v + b` is representable; otherwise one rounding.
        for (a, b) in x.iter().zip(&e) {
            assert!((a - b).abs() <= f64::EPSILON * (b.abs() + 0.5), "{a} vs {b}");
        }
        let d = EmphasisDirective::new(vec![0], 0.0);
        assert_eq!(infer(&m, &input, Some(&d)).unwrap(), infer(&m, &input, None).unwrap());
    }

    #[test]
    fn zero_bias_row_is_exactly_zero() {
        let m = model(EmphasisMode::Wavelet);
        let reports = analyze_deltas(&m, &make_synthetic_corpus(11, 3), &[-0.5, 0.0, 1.0]).unwrap();
        assert_eq!(reports.len(), 3);
        assert_eq!(reports[0].n_words, 3);
        for s in reports[1].streams {
            assert_eq!((s.delta_mean.to_bits(), s.delta_std.to_bits()), (0, 0));
        }
        assert!(reports[2].streams.iter().any(|s| s.delta_mean != 0.0));
    }
}
