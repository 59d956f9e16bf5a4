//! Domain types shared by every stage of the pipeline.
//!
//! All time quantities live on a single frame grid (10 ms by default). Pitch
//! uses `0.0` for unvoiced frames. Phones that belong to no word are pauses and
//! must carry one of the [`SILENCE_LABELS`].

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels accepted for phones outside every word span.
pub const SILENCE_LABELS: &[&str] = &["sil", "sp", "pau", ""];

/// Voiced pitch must lie strictly inside this range (Hz).
pub const MIN_VOICED_HZ: f64 = 40.0;
pub const MAX_VOICED_HZ: f64 = 800.0;

pub fn is_silence_label(label: &str) -> bool {
    SILENCE_LABELS.contains(&label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneSegment {
    pub label: String,
    pub start_frame: usize,
    pub num_frames: usize,
}

impl PhoneSegment {
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.num_frames
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSpan {
    pub text: String,
    pub phone_start: usize,
    pub phone_end: usize,
    /// `None` means the word was never annotated, which is not the same as
    /// "not emphasized".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emphasized: Option<bool>,
}

impl WordSpan {
    pub fn phone_range(&self) -> std::ops::Range<usize> {
        self.phone_start..self.phone_end
    }
}

fn default_sample_rate() -> u32 {
    24_000
}

fn default_frame_shift() -> f64 {
    10.0
}

/// One aligned utterance: phones grouped into words plus per-frame tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedUtterance {
    pub id: String,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: u32,
    #[serde(default = "default_frame_shift")]
    pub frame_shift_ms: f64,
    pub phones: Vec<PhoneSegment>,
    pub words: Vec<WordSpan>,
    pub pitch_hz: Vec<f64>,
    pub energy_db: Vec<f64>,
}

impl AlignedUtterance {
    /// Frame index one past the last phone, 0 when there are no phones.
    pub fn phone_frame_end(&self) -> usize {
        self.phones.last().map(PhoneSegment::end_frame).unwrap_or(0)
    }

    pub fn num_frames(&self) -> usize {
        self.pitch_hz.len()
    }

    /// Frame span `[start, end)` covered by a word. Assumes a valid utterance.
    pub fn word_frames(&self, word: usize) -> std::ops::Range<usize> {
        let w = &self.words[word];
        let start = self.phones[w.phone_start].start_frame;
        let end = self.phones[w.phone_end - 1].end_frame();
        start..end
    }

    /// For every phone, the index of the word containing it (if any).
    pub fn phone_word_index(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.phones.len()];
        for (wi, w) in self.words.iter().enumerate() {
            for slot in out.iter_mut().take(w.phone_end.min(self.phones.len())).skip(w.phone_start) {
                *slot = Some(wi);
            }
        }
        out
    }

    pub fn is_voiced(&self, frame: usize) -> bool {
        self.pitch_hz.get(frame).is_some_and(|&p| p > 0.0)
    }
}

/// Per-word values of the three emphasis feature families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordFeatures {
    pub pitch_var: f64,
    pub dur_var: f64,
    pub wavelet: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmphasisFeatures {
    pub utterance_id: String,
    pub per_word: Vec<WordFeatures>,
    /// `true` before normalization.
    pub raw: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Corpus statistics for the raw features, ordered `[pitch_var, dur_var, wavelet]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub means: [f64; 3],
    pub variances: [f64; 3],
    /// Number of words the statistics were computed over.
    pub corpus_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// A single invariant violation reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub index: Option<usize>,
    pub message: String,
}

impl Violation {
    fn new(field: &str, index: Option<usize>, message: impl Into<String>) -> Self {
        Violation { field: field.to_string(), index, message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}[{}]: {}", self.field, i, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Check every invariant of an utterance. Never panics, whatever the input.
pub fn validate(utt: &AlignedUtterance) -> Vec<Violation> {
    let mut out = Vec::new();

    if !(utt.frame_shift_ms > 0.0) || !utt.frame_shift_ms.is_finite() {
        out.push(Violation::new("frame_shift_ms", None, format!("must be positive, got {}", utt.frame_shift_ms)));
    }
    if utt.sample_rate_hz == 0 {
        out.push(Violation::new("sample_rate_hz", None, "must be positive"));
    }

    for (i, p) in utt.phones.iter().enumerate() {
        if p.num_frames == 0 {
            out.push(Violation::new("phones", Some(i), "num_frames must be at least 1"));
        }
        if i > 0 {
            let prev = &utt.phones[i - 1];
            let expected = prev.start_frame.saturating_add(prev.num_frames);
            if p.start_frame != expected {
                out.push(Violation::new(
                    "phones",
                    Some(i),
                    format!("start_frame {} does not follow previous segment end {}", p.start_frame, expected),
                ));
            }
        }
    }

    // Word spans: ordered, non-empty, in range, non-overlapping.
    let n_phones = utt.phones.len();
    let mut covered = vec![false; n_phones];
    let mut prev_end = 0usize;
    for (i, w) in utt.words.iter().enumerate() {
        if w.phone_start >= w.phone_end {
            out.push(Violation::new(
                "words",
                Some(i),
                format!("empty span {}..{}", w.phone_start, w.phone_end),
            ));
            continue;
        }
        if w.phone_end > n_phones {
            out.push(Violation::new(
                "words",
                Some(i),
                format!("span {}..{} exceeds phone count {}", w.phone_start, w.phone_end, n_phones),
            ));
            continue;
        }
        if w.phone_start < prev_end {
            out.push(Violation::new(
                "words",
                Some(i),
                format!("span {}..{} overlaps previous word ending at {}", w.phone_start, w.phone_end, prev_end),
            ));
        }
        prev_end = prev_end.max(w.phone_end);
        for c in &mut covered[w.phone_start..w.phone_end] {
            *c = true;
        }
    }

    // Phones outside every word must be pauses; report maximal uncovered runs.
    let mut i = 0;
    while i < n_phones {
        if covered[i] || is_silence_label(&utt.phones[i].label) {
            i += 1;
            continue;
        }
        let start = i;
        while i < n_phones && !covered[i] && !is_silence_label(&utt.phones[i].label) {
            i += 1;
        }
        out.push(Violation::new(
            "words",
            None,
            format!("phones {}..{} are not covered by any word and are not silence", start, i),
        ));
    }

    let frames = utt.phones.last().map(|p| p.start_frame.saturating_add(p.num_frames)).unwrap_or(0);
    if utt.pitch_hz.len() != utt.energy_db.len() {
        out.push(Violation::new(
            "energy_db",
            None,
            format!("length {} differs from pitch_hz length {}", utt.energy_db.len(), utt.pitch_hz.len()),
        ));
    }
    if utt.pitch_hz.len() < frames {
        out.push(Violation::new(
            "pitch_hz",
            Some(utt.pitch_hz.len()),
            format!("length {} is shorter than the {} frames covered by phones", utt.pitch_hz.len(), frames),
        ));
    }
    if utt.energy_db.len() < frames && utt.energy_db.len() != utt.pitch_hz.len() {
        out.push(Violation::new(
            "energy_db",
            Some(utt.energy_db.len()),
            format!("length {} is shorter than the {} frames covered by phones", utt.energy_db.len(), frames),
        ));
    }
    for (i, &p) in utt.pitch_hz.iter().enumerate() {
        let ok = p == 0.0 || (p > MIN_VOICED_HZ && p < MAX_VOICED_HZ);
        if !ok {
            out.push(Violation::new("pitch_hz", Some(i), format!("{p} Hz is neither 0 nor inside (40, 800)")));
        }
    }
    for (i, &e) in utt.energy_db.iter().enumerate() {
        if !e.is_finite() {
            out.push(Violation::new("energy_db", Some(i), "not finite"));
        }
    }
    out
}

/// Read a JSON-lines corpus. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<AlignedUtterance>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let utt = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        out.push(utt);
    }
    Ok(out)
}

pub fn parse_corpus(text: &str) -> Result<Vec<AlignedUtterance>> {
    read_corpus(text.as_bytes())
}

pub fn write_corpus<W: Write>(mut writer: W, corpus: &[AlignedUtterance]) -> Result<()> {
    for utt in corpus {
        serde_json::to_writer(&mut writer, utt)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn corpus_to_string(corpus: &[AlignedUtterance]) -> String {
    let mut buf = Vec::new();
    write_corpus(&mut buf, corpus).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
