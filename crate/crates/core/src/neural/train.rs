use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::data::{TrainBatch, TrainingSet};
use super::layers::Params;
use super::model::{LossBreakdown, LossWeights, ModelConfig, PredictorModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 2000, batch_size: 8, learning_rate: 1e-2, momentum: 0.9, loss_weights: LossWeights::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    /// Batch loss before the update of each step.
    pub rows: Vec<(u64, LossBreakdown)>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,total,emphasis,duration,pitch,energy\n");
        for (step, l) in &self.rows {
            writeln!(s, "{step},{},{},{},{},{}", l.total, l.emphasis, l.duration, l.pitch, l.energy).expect("string write");
        }
        s
    }
}

/// Mean loss of a batch; gradients (averaged over rows) go into `grad`.
pub fn batch_loss(
    model: &PredictorModel,
    batch: &TrainBatch,
    weights: &LossWeights,
    mut rng: Option<&mut ChaCha8Rng>,
    mut grad: Option<&mut PredictorModel>,
) -> Result<LossBreakdown> {
    let b = batch.rows();
    let mut out = LossBreakdown::default();
    if b == 0 {
        return Ok(out);
    }
    let scale = 1.0 / b as f64;
    for r in 0..b {
        let (input, targets) = batch.row(r);
        let g = grad.as_deref_mut().map(|g| (g, scale));
        let l = model.loss(&input, &targets, weights, rng.as_deref_mut(), g)?;
        out.add_scaled(&l, scale);
    }
    Ok(out)
}

/// Mean teacher-forced loss over the whole set, dropout off.
pub fn evaluate(model: &PredictorModel, set: &TrainingSet, weights: &LossWeights) -> Result<LossBreakdown> {
    let mut out = LossBreakdown::default();
    let scale = 1.0 / set.len() as f64;
    for i in 0..set.len() {
        let l = model.loss(&set.inputs[i], &set.targets(i), weights, None, None)?;
        out.add_scaled(&l, scale);
    }
    Ok(out)
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `v = momentum * v + g; theta -= lr * v`.
pub struct Sgd {
    velocity: PredictorModel,
    lr: f64,
    momentum: f64,
}

impl Sgd {
    pub fn new(model: &PredictorModel, lr: f64, momentum: f64) -> Self {
        Sgd { velocity: model.zeros_like(), lr, momentum }
    }

    pub fn step(&mut self, model: &mut PredictorModel, grad: &PredictorModel) {
        for ((p, v), g) in model.tensors_mut().into_iter().zip(self.velocity.tensors_mut()).zip(grad.tensors()) {
            v.zip_mut_with(g, |v, &g| *v = self.momentum * *v + g);
            p.zip_mut_with(v, |p, &v| *p -= self.lr * v);
        }
        model.step += 1;
    }
}

/// Train a fresh model. Batches are drawn by reshuffling the corpus every
/// epoch; shuffling and dropout use separate streams of the config seed.
pub fn train(set: &TrainingSet, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(PredictorModel, LossHistory)> {
    if set.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty corpus".into()));
    }
    if model_cfg.mode != set.mode {
        return Err(Error::InvalidInput(format!(
            "model mode {:?} does not match training targets {:?}",
            model_cfg.mode, set.mode
        )));
    }
    let mut model = PredictorModel::new(model_cfg.clone(), set.vocab.clone(), set.stats.clone())?;
    let history = train_steps(&mut model, set, cfg)?;
    Ok((model, history))
}

pub fn train_steps(model: &mut PredictorModel, set: &TrainingSet, cfg: &TrainConfig) -> Result<LossHistory> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    if !(cfg.learning_rate > 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::InvalidInput("learning rate must be positive and momentum in [0, 1)".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    order_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    dropout_rng.set_stream(2);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut cursor = set.len();
    let mut opt = Sgd::new(model, cfg.learning_rate, cfg.momentum);
    let mut grad = model.zeros_like();
    let mut history = LossHistory::default();
    for _ in 0..cfg.steps {
        let mut rows = Vec::with_capacity(cfg.batch_size);
        while rows.len() < cfg.batch_size.min(set.len()) {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            rows.push(order[cursor]);
            cursor += 1;
        }
        let batch = set.batch(&rows);
        grad.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        let loss = batch_loss(model, &batch, &cfg.loss_weights, Some(&mut dropout_rng), Some(&mut grad))?;
        if !loss.total.is_finite() {
            return Err(Error::Degenerate(format!("training diverged at step {}", model.step)));
        }
        history.rows.push((model.step, loss));
        opt.step(model, &grad);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::fixtures::{synthetic_set, tiny_config};
    use crate::neural::EmphasisMode;

    fn short(steps: usize) -> TrainConfig {
        TrainConfig { steps, batch_size: 4, ..TrainConfig::default() }
    }

    #[test]
    fn training_lowers_the_loss() {
        let set = synthetic_set(4, 24, EmphasisMode::Wavelet);
        let cfg = tiny_config(EmphasisMode::Wavelet);
        let fresh = PredictorModel::new(cfg.clone(), set.vocab.clone(), set.stats.clone()).unwrap();
        let before = evaluate(&fresh, &set, &LossWeights::default()).unwrap().total;
        let (model, history) = train(&set, &cfg, &short(400)).unwrap();
        let after = evaluate(&model, &set, &LossWeights::default()).unwrap().total;
        assert!(after <= 0.5 * before, "{before} -> {after}");
        assert_eq!(history.rows.len(), 400);
        assert_eq!(model.step, 400);
    }

    #[test]
    fn identical_seeds_give_identical_checkpoints() {
        let set = synthetic_set(5, 6, EmphasisMode::Variance);
        let cfg = tiny_config(EmphasisMode::Variance);
        let (a, ha) = train(&set, &cfg, &short(30)).unwrap();
        let (b, hb) = train(&set, &cfg, &short(30)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(ha.to_csv(), hb.to_csv());
        let (c, _) = train(&set, &ModelConfig { seed: 10, ..cfg }, &short(30)).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn simplex_weights_stay_on_the_simplex() {
        let set = synthetic_set(6, 8, EmphasisMode::Combined);
        let cfg = tiny_config(EmphasisMode::Combined);
        let mut model = PredictorModel::new(cfg, set.vocab.clone(), set.stats.clone()).unwrap();
        for _ in 0..5 {
            train_steps(&mut model, &set, &TrainConfig { learning_rate: 0.05, ..short(20) }).unwrap();
            let w = model.simplex_weights().unwrap();
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        assert_ne!(model.simplex_weights().unwrap(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn mismatched_mode_and_bad_settings_are_rejected() {
        let set = synthetic_set(5, 3, EmphasisMode::Wavelet);
        assert!(train(&set, &tiny_config(EmphasisMode::Variance), &short(1)).is_err());
        let cfg = tiny_config(EmphasisMode::Wavelet);
        assert!(train(&set, &cfg, &TrainConfig { batch_size: 0, ..short(1) }).is_err());
        assert!(train(&set, &cfg, &TrainConfig { momentum: 1.0, ..short(1) }).is_err());
    }

    #[test]
    fn history_csv_has_one_row_per_step() {
        let set = synthetic_set(5, 3, EmphasisMode::Wavelet);
        let (_, h) = train(&set, &tiny_config(EmphasisMode::Wavelet), &short(3)).unwrap();
        let csv = h.to_csv();
        assert_eq!(csv.lines().next(), Some("step,total,emphasis,duration,pitch,energy"));
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
    }

    #[test]
    fn momentum_update_rule() {
        let set = synthetic_set(5, 2, EmphasisMode::Wavelet);
        let mut m = PredictorModel::new(tiny_config(EmphasisMode::Wavelet), set.vocab.clone(), set.stats.clone()).unwrap();
        let start = m.clone();
        let mut g = m.zeros_like();
        g.tensors_mut().into_iter().for_each(|t| t.fill(1.0));
        let mut opt = Sgd::new(&m, 0.1, 0.5);
        opt.step(&mut m, &g);
        opt.step(&mut m, &g);
        // v1 = 1, v2 = 1.5; total displacement 0.1 * 2.5.
        let (a, b) = (start.tensors()[0][[0, 0]], m.tensors()[0][[0, 0]]);
        assert!((a - b - 0.25).abs() < 1e-12);
        assert_eq!(m.step, 2);
    }
}
