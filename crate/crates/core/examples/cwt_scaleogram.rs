//! Scaleogram of one synthetic utterance, its prominence lines and the
//! resulting word prominence.
//!
//! cargo run --example cwt_scaleogram [scaleogram.csv]

use prosodike::cwt::{build_composite, cwt_transform_with, extract_loma, scaleogram_to_csv, word_prominence, WaveletConfig};
use prosodike::neural::make_synthetic_corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let utt = make_synthetic_corpus(0, 1).remove(0);
    let cfg = WaveletConfig::default();
    let composite = build_composite(&utt, cfg.weights, cfg.duration_smoothing)?;
    let sg = cwt_transform_with(&composite.values, cfg.num_scales, cfg.base_scale_frames, cfg.padding)?;

    let lines = extract_loma(&sg);
    println!("{} frames x {} scales, {} lines", sg.num_frames(), sg.scales.len(), lines.len());
    for l in lines.iter().take(5) {
        println!("  anchor {:>4}  strength {:.3}  length {}", l.anchor_frame, l.strength, l.points.len());
    }

    let prominence = word_prominence(&lines, &utt, cfg.aggregation);
    for (w, p) in utt.words.iter().zip(&prominence) {
        let mark = if w.emphasized == Some(true) { "*" } else { " " };
        println!("{mark} {:<10} {p:.3}", w.text);
    }

    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, scaleogram_to_csv(&sg))?;
        println!("wrote {path}");
    }
    Ok(())
}
