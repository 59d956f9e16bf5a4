//! Train a small wavelet-mode predictor and push the emphasized word of a
//! held-out sentence with a range of biases.
//!
//! cargo run --release --example train_and_control [steps]

use prosodike::control::{analyze_deltas, infer, EmphasisDirective};
use prosodike::detector::{tune, TuneGrid};
use prosodike::emphfeat::{extract_corpus, fit_stats, normalize_corpus, CombinedWeights, NormExponent, Normalizer};
use prosodike::neural::{make_synthetic_corpus, synthetic_phone_inventory, train, EmphasisMode, ModelConfig, TrainConfig, TrainingSet};

const TRAIN: usize = 150;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(600);
    let corpus = make_synthetic_corpus(1, TRAIN + 20);
    let (train_utts, held_out) = corpus.split_at(TRAIN);

    let cfg = tune(train_utts, &TuneGrid::default())?.best;
    let raw = extract_corpus(&corpus, &cfg)?;
    let norm = Normalizer::new(fit_stats(&raw[..TRAIN])?, NormExponent::Two);
    let feats = normalize_corpus(&corpus, &raw, &norm, &CombinedWeights::uniform())?;

    let mode = EmphasisMode::Wavelet;
    let set = TrainingSet::build_with_vocab(train_utts, &feats[..TRAIN], mode, synthetic_phone_inventory())?;
    let (model, history) = train(&set, &ModelConfig { mode, ..ModelConfig::default() }, &TrainConfig { steps, ..TrainConfig::default() })?;
    let (first, last) = (&history.rows[0].1, &history.rows[history.rows.len() - 1].1);
    println!("loss {:.3} -> {:.3} over {steps} steps", first.total, last.total);

    let utt = &held_out[0];
    let target = utt.words.iter().position(|w| w.emphasized == Some(true)).unwrap_or(0);
    let input = model.input_for(utt)?;
    println!("pushing '{}' in {}", utt.words[target].text, utt.id);
    for bias in [-0.5, 0.0, 0.5, 1.0] {
        let p = infer(&model, &input, Some(&EmphasisDirective::new(vec![target], bias)))?;
        let phones = input.words[target].clone();
        let frames: usize = phones.clone().map(|i| p.duration_frames[i]).sum();
        let pitch = phones.clone().map(|i| p.pitch_hz[i]).sum::<f64>() / phones.len() as f64;
        println!("  bias {bias:>4}: {frames:>3} frames, {pitch:.1} Hz");
    }

    for r in analyze_deltas(&model, held_out, &[-0.5, 0.0, 0.5, 1.0])? {
        let [d, p, e] = r.streams;
        println!(
            "  bias {:>4}: dur {:+.3} frames, pitch {:+.2} Hz, energy {:+.2} dB over {} words",
            r.bias, d.delta_mean, p.delta_mean, e.delta_mean, r.n_words
        );
    }
    Ok(())
}
