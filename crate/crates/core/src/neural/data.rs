use std::collections::BTreeSet;

use ndarray::{s, Array2, Array3};

use crate::cwt::interpolated_log_pitch;
use crate::datamodel::{AlignedUtterance, EmphasisFeatures};
use crate::error::{Error, Result};

use super::model::{emphasis_heads, phone_input, EmphasisMode, PhoneInput, SampleTargets, Standardizer, TargetStats};

/// Sorted set of phone labels in the corpus.
pub fn build_vocab(corpus: &[AlignedUtterance]) -> Vec<String> {
    corpus.iter().flat_map(|u| u.phones.iter().map(|p| p.label.clone())).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Per-phone `[ln frames, mean log-pitch, mean energy dB]`.
///
/// Pitch averages voiced frames; phones without any fall back to the
/// interpolated contour.
pub fn phone_prosody(utt: &AlignedUtterance) -> Result<Array2<f64>> {
    let interp = interpolated_log_pitch(utt)?;
    let mut out = Array2::zeros((utt.phones.len(), 3));
    for (i, p) in utt.phones.iter().enumerate() {
        let frames = p.start_frame..p.end_frame().min(utt.num_frames());
        if frames.is_empty() {
            return Err(Error::InvalidInput(format!("{}: phone {i} has no frames", utt.id)));
        }
        let voiced: Vec<f64> = frames.clone().filter(|&t| utt.is_voiced(t)).map(|t| utt.pitch_hz[t].ln()).collect();
        let pitch = if voiced.is_empty() {
            interp[frames.clone()].iter().sum::<f64>() / frames.len() as f64
        } else {
            voiced.iter().sum::<f64>() / voiced.len() as f64
        };
        let energy = utt.energy_db[frames.clone()].iter().sum::<f64>() / frames.len() as f64;
        out[[i, 0]] = (p.num_frames as f64).ln();
        out[[i, 1]] = pitch;
        out[[i, 2]] = energy;
    }
    Ok(out)
}

/// Word-level emphasis targets broadcast to phones (`len x heads`, feature
/// units). Pause phones get 0.
pub fn phone_emphasis(utt: &AlignedUtterance, feats: &EmphasisFeatures, mode: EmphasisMode) -> Result<Array2<f64>> {
    if feats.per_word.len() != utt.words.len() {
        return Err(Error::InvalidInput(format!(
            "{}: {} feature records for {} words",
            utt.id,
            feats.per_word.len(),
            utt.words.len()
        )));
    }
    let mut out = Array2::zeros((utt.phones.len(), emphasis_heads(mode)));
    for (w, f) in utt.words.iter().zip(&feats.per_word) {
        let vals: Vec<f64> = match mode {
            EmphasisMode::Variance => vec![f.pitch_var, f.dur_var],
            EmphasisMode::Wavelet => vec![f.wavelet],
            EmphasisMode::Combined => vec![f.pitch_var, f.dur_var, f.wavelet],
        };
        for i in w.phone_range() {
            for (k, v) in vals.iter().enumerate() {
                out[[i, k]] = *v;
            }
        }
    }
    Ok(out)
}

/// Standardized inputs and targets for every utterance of a corpus.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub mode: EmphasisMode,
    pub vocab: Vec<String>,
    pub stats: TargetStats,
    pub inputs: Vec<PhoneInput>,
    pub emphasis: Vec<Array2<f64>>,
    pub prosody: Vec<Array2<f64>>,
}

impl TrainingSet {
    /// `features[i]` must belong to `corpus[i]` and hold normalized values.
    pub fn build(corpus: &[AlignedUtterance], features: &[EmphasisFeatures], mode: EmphasisMode) -> Result<Self> {
        Self::build_with_vocab(corpus, features, mode, build_vocab(corpus))
    }

    pub fn build_with_vocab(
        corpus: &[AlignedUtterance],
        features: &[EmphasisFeatures],
        mode: EmphasisMode,
        vocab: Vec<String>,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("cannot train on an empty corpus".into()));
        }
        if corpus.len() != features.len() {
            return Err(Error::InvalidInput(format!("{} utterances but {} feature records", corpus.len(), features.len())));
        }
        let mut inputs = Vec::with_capacity(corpus.len());
        let mut emphasis = Vec::with_capacity(corpus.len());
        let mut prosody = Vec::with_capacity(corpus.len());
        for (u, f) in corpus.iter().zip(features) {
            if f.utterance_id != u.id {
                return Err(Error::InvalidInput(format!("feature record {:?} does not match utterance {:?}", f.utterance_id, u.id)));
            }
            if f.raw {
                return Err(Error::InvalidInput(format!("{}: emphasis targets must be normalized features", u.id)));
            }
            inputs.push(phone_input(&vocab, u)?);
            emphasis.push(phone_emphasis(u, f, mode)?);
            prosody.push(phone_prosody(u)?);
        }

        let heads = emphasis_heads(mode);
        let word_phone = |i: usize| -> Vec<usize> { inputs[i].words.iter().flat_map(|r| r.clone()).collect() };
        let emph_stats: Vec<Standardizer> = (0..heads)
            .map(|k| {
                Standardizer::fit((0..corpus.len()).flat_map(|i| {
                    let e = &emphasis[i];
                    word_phone(i).into_iter().map(move |p| e[[p, k]])
                }))
            })
            .collect();
        let pros_stats: Vec<Standardizer> =
            (0..3).map(|k| Standardizer::fit(prosody.iter().flat_map(|p| p.column(k).to_vec()))).collect();
        let range = |k: usize| {
            let (lo, hi) = prosody
                .iter()
                .flat_map(|p| p.column(k).to_vec())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            }
        };
        let stats = TargetStats {
            emphasis: emph_stats.clone(),
            prosody: [pros_stats[0], pros_stats[1], pros_stats[2]],
            pitch_range: range(1),
            energy_range: range(2),
        };
        for e in &mut emphasis {
            for (mut col, st) in e.columns_mut().into_iter().zip(&emph_stats) {
                col.mapv_inplace(|v| st.forward(v));
            }
        }
        for p in &mut prosody {
            for (mut col, st) in p.columns_mut().into_iter().zip(&pros_stats) {
                col.mapv_inplace(|v| st.forward(v));
            }
        }
        Ok(TrainingSet { mode, vocab, stats, inputs, emphasis, prosody })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn targets(&self, i: usize) -> SampleTargets<'_> {
        SampleTargets { emphasis: self.emphasis[i].view(), prosody: self.prosody[i].view() }
    }

    /// Padded batch of the given utterances.
    pub fn batch(&self, rows: &[usize]) -> TrainBatch {
        let max_len = rows.iter().map(|&i| self.inputs[i].ids.len()).max().unwrap_or(0);
        let heads = emphasis_heads(self.mode);
        let b = rows.len();
        let mut batch = TrainBatch {
            ids: Array2::zeros((b, max_len)),
            segments: Array2::zeros((b, max_len)),
            mask: Array2::from_elem((b, max_len), false),
            emphasis: Array3::zeros((b, max_len, heads)),
            prosody: Array3::zeros((b, max_len, 3)),
            words: Vec::with_capacity(b),
        };
        for (r, &i) in rows.iter().enumerate() {
            let inp = &self.inputs[i];
            let n = inp.ids.len();
            for t in 0..n {
                batch.ids[[r, t]] = inp.ids[t];
                batch.segments[[r, t]] = inp.segments[t];
                batch.mask[[r, t]] = true;
            }
            batch.emphasis.slice_mut(s![r, ..n, ..]).assign(&self.emphasis[i]);
            batch.prosody.slice_mut(s![r, ..n, ..]).assign(&self.prosody[i]);
            batch.words.push(inp.words.clone());
        }
        batch
    }
}

/// Zero-padded batch; `mask` marks real phones.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub ids: Array2<usize>,
    pub segments: Array2<usize>,
    pub mask: Array2<bool>,
    /// Standardized, `batch x len x heads`; constant within a word.
    pub emphasis: Array3<f64>,
    pub prosody: Array3<f64>,
    pub words: Vec<Vec<std::ops::Range<usize>>>,
}

impl TrainBatch {
    pub fn rows(&self) -> usize {
        self.ids.nrows()
    }

    pub fn length(&self, r: usize) -> usize {
        self.mask.row(r).iter().filter(|&&m| m).count()
    }

    /// Row `r` without padding.
    pub fn row(&self, r: usize) -> (PhoneInput, SampleTargets<'_>) {
        let n = self.length(r);
        let input = PhoneInput {
            ids: self.ids.slice(s![r, ..n]).to_vec(),
            segments: self.segments.slice(s![r, ..n]).to_vec(),
            words: self.words[r].clone(),
        };
        let targets = SampleTargets {
            emphasis: self.emphasis.slice(s![r, ..n, ..]),
            prosody: self.prosody.slice(s![r, ..n, ..]),
        };
        (input, targets)
    }
}
