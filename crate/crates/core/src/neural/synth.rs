use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::datamodel::{AlignedUtterance, PhoneSegment, WordSpan};

const CONSONANTS_VOICED: &[&str] = &["b", "d", "g", "m", "n", "l", "r", "v", "z"];
const CONSONANTS_UNVOICED: &[&str] = &["p", "t", "k", "s", "f", "sh"];
const VOWELS: &[&str] = &["aa", "ae", "ah", "eh", "ih", "iy", "ow", "uw"];

const BASE_DURATION_FRAMES: f64 = 8.0;
const DURATION_SIGMA: f64 = 0.25;
const EMPHASIS_DURATION_FACTOR: f64 = 1.4;
const EMPHASIS_SEMITONES: f64 = 4.0;
const EMPHASIS_ENERGY_DB: f64 = 2.0;
const DECLINATION_ST_PER_S: f64 = -2.0;
const JITTER_ST: f64 = 0.1;
const SPEECH_DB: f64 = 60.0;
const PAUSE_DB: f64 = 20.0;

fn semitones(st: f64) -> f64 {
    st * std::f64::consts::LN_2 / 12.0
}

#[derive(Clone, Copy, PartialEq)]
enum Class {
    Vowel,
    Voiced,
    Unvoiced,
}

fn class_of(label: &str) -> Class {
    let base = label.trim_end_matches(['0', '1']);
    if VOWELS.contains(&base) {
        Class::Vowel
    } else if CONSONANTS_UNVOICED.contains(&base) {
        Class::Unvoiced
    } else {
        Class::Voiced
    }
}

/// Every phone label the generator can emit, in a fixed order.
pub fn synthetic_phone_inventory() -> Vec<String> {
    let mut v = vec!["sil".to_string()];
    v.extend(CONSONANTS_VOICED.iter().chain(CONSONANTS_UNVOICED).map(|s| s.to_string()));
    for vw in VOWELS {
        v.push(format!("{vw}0"));
        v.push(format!("{vw}1"));
    }
    v
}

/// Random annotated utterances with one emphasized word each.
///
/// Utterances have 3 to 8 words of 2 to 5 phones, framed by pauses. Phone
/// durations are lognormal around 8 frames. The emphasized word is longer
/// (x1.4), louder (+2 dB) and carries a rise-fall of +4 semitones on top of a
/// -2 semitone/s declination. Its vowels are written with stress mark `1`,
/// every other vowel with `0`, so the emphasis is recoverable from the text.
pub fn make_synthetic_corpus(seed: u64, n_utterances: usize) -> Vec<AlignedUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_utterances).map(|i| synth_utterance(&mut rng, format!("synth_{i:05}"))).collect()
}

fn synth_utterance(rng: &mut ChaCha8Rng, id: String) -> AlignedUtterance {
    let dur_dist = LogNormal::new(BASE_DURATION_FRAMES.ln(), DURATION_SIGMA).expect("valid lognormal");
    let jitter = Normal::new(0.0, semitones(JITTER_ST)).expect("valid normal");
    let energy_noise = Normal::new(0.0, 0.5).expect("valid normal");

    let n_words = rng.random_range(3..=8);
    let emph = rng.random_range(0..n_words);
    let f0 = rng.random_range(100.0..140.0f64);

    let mut phones = Vec::new();
    let mut words = Vec::new();
    let mut frame = 0;
    let lead = rng.random_range(10..=20);
    phones.push(PhoneSegment { label: "sil".into(), start_frame: 0, num_frames: lead });
    frame += lead;

    for w in 0..n_words {
        let n_phones = rng.random_range(2..=5);
        let start = phones.len();
        let mut vowel_next = rng.random_bool(0.5);
        let mut text = String::new();
        for _ in 0..n_phones {
            let label = if vowel_next {
                let v = VOWELS[rng.random_range(0..VOWELS.len())];
                text.push_str(v);
                format!("{v}{}", if w == emph { 1 } else { 0 })
            } else {
                let c = if rng.random_bool(0.6) {
                    CONSONANTS_VOICED[rng.random_range(0..CONSONANTS_VOICED.len())]
                } else {
                    CONSONANTS_UNVOICED[rng.random_range(0..CONSONANTS_UNVOICED.len())]
                };
                text.push_str(c);
                c.to_string()
            };
            vowel_next = !vowel_next;
            let mut d = dur_dist.sample(rng);
            if w == emph {
                d *= EMPHASIS_DURATION_FACTOR;
            }
            let d = (d.round() as usize).max(1);
            phones.push(PhoneSegment { label, start_frame: frame, num_frames: d });
            frame += d;
        }
        words.push(WordSpan { text, phone_start: start, phone_end: phones.len(), emphasized: Some(w == emph) });
    }
    let tail = rng.random_range(10..=20);
    phones.push(PhoneSegment { label: "sil".into(), start_frame: frame, num_frames: tail });
    frame += tail;

    let mut pitch_hz = vec![0.0; frame];
    let mut energy_db = vec![PAUSE_DB; frame];
    let emph_frames = {
        let w = &words[emph];
        phones[w.phone_start].start_frame..phones[w.phone_end - 1].end_frame()
    };
    let shift_s = 0.01;
    for (pi, p) in phones.iter().enumerate() {
        let in_word = words.iter().position(|w| w.phone_range().contains(&pi));
        let Some(wi) = in_word else {
            for t in p.start_frame..p.end_frame() {
                energy_db[t] = PAUSE_DB + energy_noise.sample(rng);
            }
            continue;
        };
        let class = class_of(&p.label);
        let offset = match class {
            Class::Vowel => 2.0,
            Class::Voiced => -3.0,
            Class::Unvoiced => -8.0,
        };
        for t in p.start_frame..p.end_frame() {
            let mut log_f0 = f0.ln() + semitones(DECLINATION_ST_PER_S) * t as f64 * shift_s;
            let mut e = SPEECH_DB + offset + energy_noise.sample(rng);
            if wi == emph {
                let pos = (t - emph_frames.start) as f64 + 0.5;
                let len = emph_frames.len() as f64;
                log_f0 += semitones(EMPHASIS_SEMITONES) * (std::f64::consts::PI * pos / len).sin();
                e += EMPHASIS_ENERGY_DB;
            }
            log_f0 += jitter.sample(rng);
            if class != Class::Unvoiced {
                pitch_hz[t] = log_f0.exp();
            }
            energy_db[t] = e;
        }
    }

    AlignedUtterance { id, sample_rate_hz: 24_000, frame_shift_ms: 10.0, phones, words, pitch_hz, energy_db }
}
