use serde::{Deserialize, Serialize};

use crate::datamodel::AlignedUtterance;
use crate::detector::{f_score, kmeans2};
use crate::error::{Error, Result};

use super::{Normalizer, RawWordFeatures};

/// Convex weights over (pitch_var, dur_var, wavelet).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct CombinedWeights {
    w: [f64; 3],
}

impl CombinedWeights {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(w: [f64; 3]) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput(format!("combined weights must be nonnegative, got {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::InvalidInput(format!("combined weights must sum to 1, got {w:?} (sum {sum})")));
        }
        Ok(CombinedWeights { w })
    }

    pub fn uniform() -> Self {
        CombinedWeights { w: [1.0 / 3.0; 3] }
    }

    /// Lattice point `(i, j, k) / denom` with `i + j + k = denom`.
    fn lattice(i: u32, j: u32, denom: u32) -> Self {
        let d = denom as f64;
        let (a, b) = (i as f64 / d, j as f64 / d);
        CombinedWeights { w: [a, b, (denom - i - j) as f64 / d] }
    }

    pub fn weights(&self) -> [f64; 3] {
        self.w
    }

    pub fn apply(&self, normalized: &[f64; 3]) -> f64 {
        self.w.iter().zip(normalized).map(|(w, v)| w * v).sum()
    }
}

impl Default for CombinedWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl TryFrom<[f64; 3]> for CombinedWeights {
    type Error = Error;
    fn try_from(w: [f64; 3]) -> Result<Self> {
        CombinedWeights::new(w)
    }
}

impl From<CombinedWeights> for [f64; 3] {
    fn from(w: CombinedWeights) -> Self {
        w.w
    }
}

/// `Σ w_i · normalize(feature_i)` for every word.
pub fn combined_feature(raw: &[RawWordFeatures], weights: &CombinedWeights, normalizer: &Normalizer) -> Result<Vec<f64>> {
    raw.iter().map(|r| Ok(weights.apply(&normalizer.normalize_all(r)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFit {
    pub weights: CombinedWeights,
    pub f1: f64,
    /// Number of simplex points scored.
    pub evaluated: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

const COARSE: u32 = 20;
const FINE: u32 = 100;
const REFINE_RADIUS: i64 = 5;

/// Simplex weights maximizing the detector F-score of the combined feature.
///
/// A coarse lattice with step 1/20 covers the whole simplex; the best point is
/// then refined on a 1/100 lattice within ±0.05 in each coordinate. Ties go to
/// the lexicographically smallest weight vector.
pub fn fit_combined_weights(normalized: &[[f64; 3]], labels: &[bool]) -> Result<WeightFit> {
    if normalized.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature triples but {} annotations",
            normalized.len(),
            labels.len()
        )));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::InvalidInput("annotations must contain both emphasized and plain words".into()));
    }
    let score = |w: &CombinedWeights| -> f64 {
        let values: Vec<f64> = normalized.iter().map(|n| w.apply(n)).collect();
        match kmeans2(&values) {
            Ok(det) => f_score(&det.predictions, labels).map(|f| f.f1).unwrap_or(0.0),
            Err(_) => 0.0,
        }
    };
    // Lattice points in lexicographic order of (i, j, k) / denom.
    let search = |denom: u32, points: Vec<(u32, u32)>| -> ((u32, u32), f64, usize) {
        let mut pts = points;
        pts.sort_by_key(|&(i, j)| (i, j));
        let mut best = (pts[0], f64::NEG_INFINITY);
        for &(i, j) in &pts {
            let f = score(&CombinedWeights::lattice(i, j, denom));
            if f > best.1 {
                best = ((i, j), f);
            }
        }
        (best.0, best.1, pts.len())
    };

    let coarse: Vec<(u32, u32)> = (0..=COARSE).flat_map(|i| (0..=COARSE - i).map(move |j| (i, j))).collect();
    let ((ci, cj), _, n_coarse) = search(COARSE, coarse);

    let ratio = (FINE / COARSE) as i64;
    let ck = (COARSE - ci - cj) as i64 * ratio;
    let (ci, cj) = (ci as i64 * ratio, cj as i64 * ratio);
    let mut fine = Vec::new();
    for i in (ci - REFINE_RADIUS).max(0)..=(ci + REFINE_RADIUS).min(FINE as i64) {
        for j in (cj - REFINE_RADIUS).max(0)..=(cj + REFINE_RADIUS).min(FINE as i64 - i) {
            let k = FINE as i64 - i - j;
            if (k - ck).abs() <= REFINE_RADIUS {
                fine.push((i as u32, j as u32));
            }
        }
    }
    let ((fi, fj), f1, n_fine) = search(FINE, fine);
    Ok(WeightFit { weights: CombinedWeights::lattice(fi, fj, FINE), f1, evaluated: n_coarse + n_fine, config_hash: None })
}

/// [`fit_combined_weights`] over the annotated words of a corpus.
pub fn fit_combined_weights_corpus(
    corpus: &[AlignedUtterance],
    raw: &[Vec<RawWordFeatures>],
    normalizer: &Normalizer,
) -> Result<WeightFit> {
    let mut normalized = Vec::new();
    let mut labels = Vec::new();
    for (utt, feats) in corpus.iter().zip(raw) {
        for (word, r) in utt.words.iter().zip(feats) {
            if let Some(e) = word.emphasized {
                normalized.push(normalizer.normalize_all(r)?);
                labels.push(e);
            }
        }
    }
    fit_combined_weights(&normalized, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::FeatureStats;
    use crate::emphfeat::NormExponent;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_are_validated() {
        assert!(CombinedWeights::new([0.5, 0.5, 0.0]).is_ok());
        assert!(CombinedWeights::new([0.5, 0.6, -0.1]).is_err());
        assert!(CombinedWeights::new([0.5, 0.4, 0.0]).is_err());
        assert!(serde_json::from_str::<CombinedWeights>("[0.2,0.2,0.2]").is_err());
        let w: CombinedWeights = serde_json::from_str("[0.25,0.25,0.5]").unwrap();
        assert_eq!(serde_json::to_string(&w).unwrap(), "[0.25,0.25,0.5]");
    }

    #[test]
    fn dot_product_examples() {
        let third = CombinedWeights::uniform();
        assert!((third.apply(&[0.3, 0.6, 0.9]) - 0.6).abs() < 1e-12);
        let sel = CombinedWeights::new([1.0, 0.0, 0.0]).unwrap();
        assert_eq!(sel.apply(&[0.37, 5.0, -2.0]), 0.37);
    }

    #[test]
    fn combined_feature_selects_pitch() {
        let n = Normalizer::new(
            FeatureStats { means: [0.0; 3], variances: [0.5, 2.0, 3.0], corpus_size: 4, config_hash: None },
            NormExponent::Two,
        );
        let raw = [RawWordFeatures { pitch_var: 0.3, dur_var: 1.0, wavelet: 2.0 }];
        let c = combined_feature(&raw, &CombinedWeights::new([1.0, 0.0, 0.0]).unwrap(), &n).unwrap();
        assert_eq!(c[0], n.normalize(0, 0.3).unwrap());
    }

    #[test]
    fn pitch_only_annotations_concentrate_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut triples = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..400 {
            // Narrow gap around 0: only a nearly pure pitch weight keeps the
            // classes apart once the noise features are mixed in.
            let label = rng.random_bool(0.4);
            let p: f64 = if label { rng.random_range(0.05..1.0) } else { rng.random_range(-1.0..0.0) };
            triples.push([p, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            labels.push(label);
        }
        let fit = fit_combined_weights(&triples, &labels).unwrap();
        assert!(fit.weights.weights()[0] >= 0.9, "{fit:?}");
        assert_eq!(fit.f1, 1.0);
        let s: f64 = fit.weights.weights().iter().sum();
        assert!((s - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn identical_features_tie_to_smallest_vector() {
        let vals = [-0.8, -0.5, -0.4, 0.6, 0.9];
        let triples: Vec<[f64; 3]> = vals.iter().map(|&v| [v, v, v]).collect();
        let fit = fit_combined_weights(&triples, &[false, false, false, true, true]).unwrap();
        assert_eq!(fit.weights.weights(), [0.0, 0.0, 1.0]);
        assert_eq!(fit.f1, 1.0);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(fit_combined_weights(&[[0.0; 3], [1.0; 3]], &[true, true]).is_err());
        assert!(fit_combined_weights(&[[0.0; 3]], &[true, false]).is_err());
    }
}
