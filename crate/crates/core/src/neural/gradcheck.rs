//! Central finite-difference verification of the hand-written gradients.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::data::TrainBatch;
use super::layers::{trace_relu, Conv1d, Embedding, LayerNorm, Linear, Params, SelfAttention, Simplex};
use super::model::{LossWeights, PredictorHead, PredictorModel};
use super::train::batch_loss;

pub const FD_STEP: f64 = 1e-4;
/// Smallest step tried when a probe straddles a ReLU kink.
pub const MIN_FD_STEP: f64 = 1e-7;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so that gradients that are zero up to rounding do not
/// produce huge relative errors.
pub const ABS_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Entries whose `±FD_STEP` probes flipped a ReLU and were re-probed with
    /// a smaller step.
    pub reduced_step: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

/// Compare `analytic` with central differences of `loss` for every entry of
/// every tensor of `params`. The numeric value is Richardson-extrapolated from
/// steps `h` and `h/2`, which cancels the `h^2` truncation term.
///
/// Central differences are only meaningful where the loss is smooth. When a
/// probe at `±FD_STEP` switches any ReLU relative to the unperturbed point,
/// the step is halved (down to [`MIN_FD_STEP`]) until it does not.
pub fn check_params<P: Params + Clone>(
    name: &str,
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> f64,
) -> Vec<GradCheck> {
    let mut probe = params.clone();
    let (_, base) = trace_relu(|| loss(&probe));
    let grads: Vec<Array2<f64>> = analytic.tensors().into_iter().cloned().collect();
    let mut out = Vec::new();
    for (ti, g) in grads.iter().enumerate() {
        let mut worst: f64 = 0.0;
        let mut reduced = 0;
        for idx in 0..g.len() {
            let (r, c) = (idx / g.ncols(), idx % g.ncols());
            let orig = probe.tensors()[ti][[r, c]];
            let mut h = FD_STEP;
            let numeric = loop {
                let central = |step: f64, probe: &mut P| {
                    probe.tensors_mut()[ti][[r, c]] = orig + step;
                    let (up, pu) = trace_relu(|| loss(probe));
                    probe.tensors_mut()[ti][[r, c]] = orig - step;
                    let (down, pd) = trace_relu(|| loss(probe));
                    probe.tensors_mut()[ti][[r, c]] = orig;
                    ((up - down) / (2.0 * step), pu == base && pd == base)
                };
                let (wide, smooth_wide) = central(h, &mut probe);
                let (narrow, smooth_narrow) = central(h / 2.0, &mut probe);
                if (smooth_wide && smooth_narrow) || h / 2.0 < MIN_FD_STEP {
                    break (4.0 * narrow - wide) / 3.0;
                }
                h /= 2.0;
            };
            if h < FD_STEP {
                reduced += 1;
            }
            worst = worst.max(relative_error(g[[r, c]], numeric));
        }
        out.push(GradCheck {
            name: format!("{name}[{ti}] {}x{}", g.nrows(), g.ncols()),
            checked: g.len(),
            max_rel_err: worst,
            reduced_step: reduced,
        });
    }
    out
}

/// A layer together with its input, so input gradients are checked too.
#[derive(Clone)]
struct WithInput<L> {
    layer: L,
    x: Array2<f64>,
}

impl<L: Params> Params for WithInput<L> {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = self.layer.tensors();
        v.push(&self.x);
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.layer.tensors_mut();
        v.push(&mut self.x);
        v
    }
}

fn random(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    Array2::from_shape_fn(shape, |_| n.sample(rng))
}

/// Scalar probe loss `sum(y * r)`, so `dL/dy = r`.
fn project(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (y * r).sum()
}

fn check_layer<L: Params + Clone>(
    name: &str,
    layer: L,
    x: Array2<f64>,
    out_shape: (usize, usize),
    rng: &mut ChaCha8Rng,
    forward: impl Fn(&L, ArrayView2<f64>) -> Array2<f64>,
    backward: impl Fn(&L, ArrayView2<f64>, ArrayView2<f64>, &mut L) -> Array2<f64>,
) -> Vec<GradCheck> {
    let r = random(out_shape, rng);
    let mut grad = layer.zeros_like();
    let dx = backward(&layer, x.view(), r.view(), &mut grad);
    let point = WithInput { layer, x };
    let analytic = WithInput { layer: grad, x: dx };
    check_params(name, &point, &analytic, |p| project(&forward(&p.layer, p.x.view()), &r))
}

/// Every layer type in isolation, parameters and inputs.
pub fn layer_checks(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let emb = Embedding::new(4, 3, &mut rng);
    let ids = [0usize, 2, 1, 2, 3];
    let r = random((ids.len(), 3), &mut rng);
    let mut g = emb.zeros_like();
    emb.backward(&ids, r.view(), &mut g);
    out.extend(check_params("embedding", &emb, &g, |e| project(&e.forward(&ids), &r)));

    let lin = Linear::new(4, 3, &mut rng);
    let x = random((5, 4), &mut rng);
    out.extend(check_layer("linear", lin, x, (5, 3), &mut rng, |l, x| l.forward(x), |l, x, dy, g| l.backward(x, dy, g)));

    for (name, segs) in [("conv", None), ("conv/segmented", Some(vec![0, 0, 1, 1, 1, 2]))] {
        let conv = Conv1d::new(3, 4, 3, &mut rng);
        let x = random((6, 3), &mut rng);
        let s1 = segs.clone();
        let s2 = segs.clone();
        out.extend(check_layer(
            name,
            conv,
            x,
            (6, 4),
            &mut rng,
            move |l, x| l.forward(x, s1.as_deref()).0,
            move |l, x, dy, g| {
                let (_, u) = l.forward(x, s2.as_deref());
                l.backward(&u, dy, s2.as_deref(), g)
            },
        ));
    }

    let mut ln = LayerNorm::new(6);
    ln.gamma = random((1, 6), &mut rng);
    ln.beta = random((1, 6), &mut rng);
    let x = random((5, 6), &mut rng);
    out.extend(check_layer(
        "layer_norm",
        ln,
        x,
        (5, 6),
        &mut rng,
        |l, x| l.forward(x).0,
        |l, x, dy, g| {
            let (_, c) = l.forward(x);
            l.backward(&c, dy, g)
        },
    ));

    let att = SelfAttention::new(4, &mut rng);
    let x = random((5, 4), &mut rng);
    out.extend(check_layer(
        "attention",
        att,
        x,
        (5, 4),
        &mut rng,
        |l, x| l.forward(x).0,
        |l, x, dy, g| {
            let (_, c) = l.forward(x);
            l.backward(x, &c, dy, g)
        },
    ));

    let mut sx = Simplex::new(3);
    sx.logits = random((1, 3), &mut rng);
    let x = random((5, 3), &mut rng);
    out.extend(check_layer("simplex", sx, x, (5, 1), &mut rng, |l, x| l.forward(x), |l, x, dy, g| l.backward(x, dy, g)));

    // A full predictor head with a fixed dropout mask.
    let head = PredictorHead::new(3, 4, 2, 3, &mut rng);
    let x = random((6, 3), &mut rng);
    let segs = vec![0, 0, 0, 1, 1, 2];
    let drop_seed = seed ^ 0x5eed;
    let fwd = |l: &PredictorHead, x: ArrayView2<f64>| {
        let mut d = ChaCha8Rng::seed_from_u64(drop_seed);
        l.forward(x, Some(&segs), 0.2, Some(&mut d)).0
    };
    out.extend(check_layer("predictor_head", head, x, (6, 1), &mut rng, fwd, |l, x, dy, g| {
        let mut d = ChaCha8Rng::seed_from_u64(drop_seed);
        let (_, c) = l.forward(x, Some(&segs), 0.2, Some(&mut d));
        l.backward(&c, dy, Some(&segs), g)
    }));
    out
}

/// Every trainable parameter of a model on one batch, with dropout active
/// under a fixed seed.
pub fn model_checks(model: &PredictorModel, batch: &TrainBatch, weights: &LossWeights, dropout_seed: u64) -> Vec<GradCheck> {
    let loss = |m: &PredictorModel| {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        batch_loss(m, batch, weights, Some(&mut rng), None).expect("valid batch").total
    };
    let mut grad = model.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    batch_loss(model, batch, weights, Some(&mut rng), Some(&mut grad)).expect("valid batch");
    check_params("model", model, &grad, loss)
}
