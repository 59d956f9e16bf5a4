//! Bringing external alignments, audio and pitch/energy tracks into
//! [`AlignedUtterance`] form.

mod textgrid;
mod track;
mod wav;

pub use textgrid::{
    align_to_utterance, mark_emphasis, parse_textgrid, serialize_textgrid, Interval, IntervalTier, TextGridDocument, TextGridForm,
    UtteranceSkeleton,
};
pub use track::read_track_csv;
pub use wav::{read_wav, write_wav_pcm16, AudioBuffer};

use crate::datamodel::AlignedUtterance;

/// Energy written into frames that a track does not cover.
pub const ENERGY_FLOOR_DB: f64 = -100.0;

/// Quantize a time in seconds to the nearest frame index. Exact half-frame
/// ties go to the earlier frame.
pub fn seconds_to_frame(seconds: f64, frame_shift_ms: f64) -> usize {
    let x = seconds * 1000.0 / frame_shift_ms;
    let f = (x - 0.5 - 1e-9).ceil();
    if f <= 0.0 {
        0
    } else {
        f as usize
    }
}

/// Combine an alignment skeleton with per-frame tracks. Tracks are cut or
/// padded (pitch with 0, energy with [`ENERGY_FLOOR_DB`]) to the frame span of
/// the alignment so both arrays end up with the same length.
pub fn assemble_utterance(
    id: impl Into<String>,
    skeleton: UtteranceSkeleton,
    mut pitch_hz: Vec<f64>,
    mut energy_db: Vec<f64>,
    sample_rate_hz: u32,
    frame_shift_ms: f64,
) -> AlignedUtterance {
    let frames = skeleton.num_frames();
    pitch_hz.resize(frames, 0.0);
    energy_db.resize(frames, ENERGY_FLOOR_DB);
    AlignedUtterance {
        id: id.into(),
        sample_rate_hz,
        frame_shift_ms,
        phones: skeleton.phones,
        words: skeleton.words,
        pitch_hz,
        energy_db,
    }
}
