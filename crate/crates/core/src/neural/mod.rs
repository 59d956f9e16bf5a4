//! Toy hierarchical prosody predictor.
//!
//! Phone ids are encoded (embedding, conv blocks, optional self-attention);
//! emphasis heads predict per-phone emphasis features from the encodings;
//! duration, pitch and energy heads read the encodings concatenated with the
//! emphasis. During training the prosody heads see ground-truth emphasis.
//! At inference the predicted emphasis can be edited before it reaches them.

mod data;
pub mod gradcheck;
pub mod layers;
mod model;
mod synth;
mod train;

pub use data::{build_vocab, phone_emphasis, phone_prosody, TrainBatch, TrainingSet};
pub use model::{
    emphasis_dim, emphasis_heads, length_regulate, phone_input, quantize, quantize_embed, EmphasisMode, LossBreakdown,
    LossWeights, ModelConfig, PhoneInput, Prediction, PredictorHead, PredictorModel, SampleTargets, Standardizer,
    TargetStats, PROSODY_STREAMS,
};
pub use synth::{make_synthetic_corpus, synthetic_phone_inventory};
pub use train::{batch_loss, evaluate, train, train_steps, LossHistory, Sgd, TrainConfig};

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::cwt::WaveletConfig;
    use crate::emphfeat::{extract_corpus, fit_stats, normalize_corpus, CombinedWeights, NormExponent, Normalizer};

    pub fn synthetic_set(seed: u64, n: usize, mode: EmphasisMode) -> TrainingSet {
        let corpus = make_synthetic_corpus(seed, n);
        let raw = extract_corpus(&corpus, &WaveletConfig::default()).unwrap();
        let norm = Normalizer::new(fit_stats(&raw).unwrap(), NormExponent::Two);
        let feats = normalize_corpus(&corpus, &raw, &norm, &CombinedWeights::uniform()).unwrap();
        TrainingSet::build(&corpus, &feats, mode).unwrap()
    }

    pub fn tiny_config(mode: EmphasisMode) -> ModelConfig {
        ModelConfig { embed_dim: 6, mode, seed: 9, ..ModelConfig::default() }
    }
}
