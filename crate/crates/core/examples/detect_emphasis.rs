//! Unsupervised emphasis detection on a synthetic corpus with each feature
//! kind, before and after tuning the wavelet configuration.
//!
//! cargo run --release --example detect_emphasis [n_utterances]

use prosodike::cwt::WaveletConfig;
use prosodike::detector::{evaluate, tune, TuneGrid};
use prosodike::emphfeat::{
    detection_values, extract_corpus, fit_combined_weights_corpus, fit_stats, normalize_corpus, FeatureKind,
    NormExponent, Normalizer,
};
use prosodike::neural::make_synthetic_corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let corpus = make_synthetic_corpus(0, n);

    let report = tune(&corpus, &TuneGrid::default())?;
    println!("scored {} configs; best F1 {:.3}", report.entries.len(), report.best_f1);

    for (label, cfg) in [("default", WaveletConfig::default()), ("tuned", report.best)] {
        let raw = extract_corpus(&corpus, &cfg)?;
        let norm = Normalizer::new(fit_stats(&raw)?, NormExponent::Two);
        let fit = fit_combined_weights_corpus(&corpus, &raw, &norm)?;
        let feats = normalize_corpus(&corpus, &raw, &norm, &fit.weights)?;
        println!("{label}: combined weights {:.2?}", fit.weights.weights());
        for kind in [FeatureKind::Variance, FeatureKind::Wavelet, FeatureKind::Combined] {
            let (det, f) = evaluate(&corpus, &detection_values(&feats, kind))?;
            println!(
                "  {kind:?}: threshold {:.4}  P {:.3}  R {:.3}  F1 {:.3}",
                det.threshold, f.precision, f.recall, f.f1
            );
        }
    }
    Ok(())
}
