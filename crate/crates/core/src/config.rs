//! One document holding every stage's settings, and its content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::DEFAULT_BIAS_GRID;
use crate::cwt::WaveletConfig;
use crate::detector::TuneGrid;
use crate::dsp::{MelConfig, PitchConfig, StftConfig};
use crate::emphfeat::NormExponent;
use crate::error::{Error, Result};
use crate::neural::{ModelConfig, TrainConfig};

pub const SEED_ENV: &str = "PROSODIKE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub phone_tier: String,
    pub word_tier: String,
    /// Optional interval tier whose non-empty intervals mark emphasized words.
    pub emphasis_tier: Option<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { phone_tier: "phones".into(), word_tier: "words".into(), emphasis_tier: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub exponent: NormExponent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub biases: Vec<f64>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig { biases: DEFAULT_BIAS_GRID.to_vec() }
    }
}

/// Settings for the whole pipeline. `seed` drives the synthetic corpus and
/// model initialization; the `model` section takes no seed of its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub ingest: IngestConfig,
    pub stft: StftConfig,
    pub pitch: PitchConfig,
    pub mel: MelConfig,
    pub cwt: WaveletConfig,
    pub features: FeatureConfig,
    pub detector: TuneGrid,
    #[serde(serialize_with = "model_without_seed")]
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub control: ControlConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            ingest: IngestConfig::default(),
            stft: StftConfig::default(),
            pitch: PitchConfig::default(),
            mel: MelConfig::default(),
            cwt: WaveletConfig::default(),
            features: FeatureConfig::default(),
            detector: TuneGrid::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            control: ControlConfig::default(),
        }
    }
}

fn model_without_seed<S: serde::Serializer>(m: &ModelConfig, s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut v = serde_json::to_value(m).map_err(serde::ser::Error::custom)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("seed");
    }
    v.serialize(s)
}

impl RunConfig {
    /// Parse TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            let t: toml::Value = toml::from_str(text).map_err(|e| Error::parse(0, e.to_string()))?;
            serde_json::to_value(t)?
        };
        if value.pointer("/model/seed").is_some() {
            return Err(Error::InvalidInput("set the seed at the top level, not under [model]".into()));
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::parse(0, e.to_string()))?;
        cfg.model.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Apply `PROSODIKE_SEED` when it is set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v.trim().parse().map_err(|_| Error::InvalidInput(format!("{SEED_ENV}={v:?} is not an integer")))?;
            self.set_seed(seed);
        }
        Ok(self)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
    }

    /// Hex SHA-256 of the canonical JSON form: keys sorted, no whitespace.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sead = 3").is_err());
        assert!(RunConfig::parse("[model]\nembed_dims = 8").is_err());
        assert!(RunConfig::parse("[model]\nseed = 8").is_err());
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = RunConfig::parse("seed = 4\n[train]\nsteps = 10\nbatch_size = 2\n[model]\nembed_dim = 8\n").unwrap();
        let b = RunConfig::parse("[model]\nembed_dim = 8\n[train]\nbatch_size = 2\nsteps = 10\n").unwrap();
        let mut b = b;
        assert_ne!(a.hash(), b.hash());
        b.set_seed(4);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.model.seed, 4);
        let json = RunConfig::parse(r#"{"train": {"steps": 10, "batch_size": 2}, "model": {"embed_dim": 8}, "seed": 4}"#).unwrap();
        assert_eq!(json.hash(), a.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
