//! Browser bindings for the noise-robustness toolkit: a Gaussian-ReLU mean
//! explorer, an analytic-vs-sampled expected-prediction comparison, and a toy
//! classifier that trains live under each objective.
//!
//! Results cross the JS boundary as JSON strings and the page draws them onto
//! canvases. Training advances one epoch per call so the browser event loop
//! stays responsive; the loop mirrors `optim::train` minus the wall clock,
//! which the bare wasm target does not have.

use gaussnet::data::{self, Dataset};
use gaussnet::moments::{self, NoiseSpec};
use gaussnet::nets::{Layer, SplitNetwork};
use gaussnet::objective::{self, ObjectiveConfig, ObjectiveMode};
use gaussnet::optim::{self, OptimizerKind, OptimizerState};
use gaussnet::rng;
use gaussnet::robustness::{self, NoiseMode, RobustnessConfig};
use gaussnet::tensor::{Graph, Tensor};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Stream tag for everything the demo seeds; keeps demo draws disjoint from
/// the library's own stream families.
const STREAM_DEMO: u64 = 0x44454d4f;

fn to_json<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

// -- Gaussian-ReLU mean explorer --------------------------------------------

#[derive(Serialize)]
struct MomentCurve {
    mu: Vec<f64>,
    /// T(mu, sigma): the post-ReLU mean under N(mu, sigma^2).
    mean: Vec<f64>,
    /// max(0, mu), the sigma = 0 limit.
    relu: Vec<f64>,
    /// dT/dmu = CDF(mu/sigma); a step function at sigma = 0.
    slope: Vec<f64>,
}

/// Samples T(mu, sigma), ReLU(mu), and dT/dmu on a uniform mu grid.
#[wasm_bindgen]
pub fn moment_curve(
    sigma: f64,
    mu_min: f64,
    mu_max: f64,
    points: u32,
) -> Result<String, JsError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(JsError::new("sigma must be finite and >= 0"));
    }
    if !(mu_min.is_finite() && mu_max.is_finite() && mu_min < mu_max) {
        return Err(JsError::new("need finite mu_min < mu_max"));
    }
    let points = points.clamp(2, 4096) as usize;
    let mut curve = MomentCurve {
        mu: Vec::with_capacity(points),
        mean: Vec::with_capacity(points),
        relu: Vec::with_capacity(points),
        slope: Vec::with_capacity(points),
    };
    for k in 0..points {
        let mu = mu_min + (mu_max - mu_min) * k as f64 / (points - 1) as f64;
        curve.mu.push(mu);
        curve.mean.push(moments::relu_gaussian_mean_scalar(mu, sigma)?);
        curve.relu.push(mu.max(0.0));
        curve.slope.push(if sigma > 0.0 {
            moments::gaussian_cdf(mu / sigma)?
        } else if mu == 0.0 {
            0.5
        } else {
            f64::from(u8::from(mu > 0.0))
        });
    }
    to_json(&curve)
}

// -- analytic vs sampled expected prediction ---------------------------------

const DEMO_INPUT: usize = 8;
const DEMO_HIDDEN: usize = 12;
const DEMO_CLASSES: usize = 5;

fn seeded_dense(in_dim: usize, out_dim: usize, r: &mut impl rand::Rng) -> Layer {
    let scale = 1.0 / (in_dim as f64).sqrt();
    let mut w = vec![0.0; in_dim * out_dim];
    rng::fill_standard_normal(r, &mut w);
    for v in &mut w {
        *v *= scale;
    }
    let mut b = vec![0.0; out_dim];
    rng::fill_standard_normal(r, &mut b);
    for v in &mut b {
        *v *= 0.1;
    }
    Layer::Dense {
        weight: Tensor::new(vec![in_dim, out_dim], w).expect("dense demo weight"),
        bias: Tensor::new(vec![out_dim], b).expect("dense demo bias"),
    }
}

/// A small seeded dense net. With `affine_tail` the part after the first ReLU
/// is a single affine map, so the analytic expected prediction is exact; the
/// deep variant adds a second ReLU, which makes it an approximation.
fn demo_net(seed: u32, affine_tail: bool) -> Result<SplitNetwork, JsError> {
    let mut r = rng::stream(seed as u64, &[STREAM_DEMO, 1]);
    let upsilon = seeded_dense(DEMO_INPUT, DEMO_HIDDEN, &mut r);
    let omega = if affine_tail {
        vec![seeded_dense(DEMO_HIDDEN, DEMO_CLASSES, &mut r)]
    } else {
        vec![
            seeded_dense(DEMO_HIDDEN, DEMO_HIDDEN, &mut r),
            Layer::Relu,
            seeded_dense(DEMO_HIDDEN, DEMO_CLASSES, &mut r),
        ]
    };
    Ok(SplitNetwork::new(
        "demo-dense",
        vec![DEMO_INPUT],
        DEMO_CLASSES,
        upsilon,
        omega,
    )?)
}

#[derive(Serialize)]
struct PredictionComparison {
    classes: usize,
    clean: Vec<f64>,
    analytic: Vec<f64>,
    sampled: Vec<f64>,
    /// Per-logit standard error of the sampled mean.
    se: Vec<f64>,
    max_abs_diff: f64,
    /// Largest |analytic - sampled| in units of that logit's standard error.
    max_se_ratio: f64,
}

/// Compares the analytic expected prediction against a Monte-Carlo mean of
/// noisy forward passes on a seeded dense net and a seeded input.
#[wasm_bindgen]
pub fn expected_vs_sampled(
    seed: u32,
    sigma: f64,
    samples: u32,
    affine_tail: bool,
) -> Result<String, JsError> {
    let samples = samples.clamp(10, 200_000) as usize;
    let net = demo_net(seed, affine_tail)?;
    let mut r = rng::stream(seed as u64, &[STREAM_DEMO, 2]);
    let mut xv = vec![0.0; DEMO_INPUT];
    rng::fill_standard_normal(&mut r, &mut xv);
    let x = Tensor::new(vec![1, DEMO_INPUT], xv)?;

    let noise = NoiseSpec::isotropic_std(sigma)?;
    let clean = net.forward(&x)?.data().to_vec();
    let analytic = moments::expected_prediction(&net, &x, &noise)?.data().to_vec();

    let mut sum = vec![0.0; DEMO_CLASSES];
    let mut sumsq = vec![0.0; DEMO_CLASSES];
    let mut noise_rng = rng::stream(seed as u64, &[STREAM_DEMO, 3]);
    for _ in 0..samples {
        let noisy = data::add_gaussian_noise(&x, &noise, &mut noise_rng)?;
        let out = net.forward(&noisy)?;
        for (k, v) in out.data().iter().enumerate() {
            sum[k] += v;
            sumsq[k] += v * v;
        }
    }
    let n = samples as f64;
    let sampled: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se: Vec<f64> = sampled
        .iter()
        .zip(&sumsq)
        .map(|(m, sq)| ((sq / n - m * m).max(0.0) / n).sqrt())
        .collect();

    let mut max_abs_diff = 0.0f64;
    let mut max_se_ratio = 0.0f64;
    for k in 0..DEMO_CLASSES {
        let diff = (analytic[k] - sampled[k]).abs();
        max_abs_diff = max_abs_diff.max(diff);
        if se[k] > 0.0 {
            max_se_ratio = max_se_ratio.max(diff / se[k]);
        }
    }
    to_json(&PredictionComparison {
        classes: DEMO_CLASSES,
        clean,
        analytic,
        sampled,
        se,
        max_abs_diff,
        max_se_ratio,
    })
}

// -- live toy trainer ---------------------------------------------------------

const TOY_HIDDEN: usize = 24;
const TOY_TRAIN: usize = 256;
const TOY_TEST: usize = 128;
const TOY_MINIBATCH: usize = 32;
const TOY_LR: f64 = 3e-3;
/// Decision-map resolution over the unit square.
const MAP_SIDE: usize = 96;

/// A 2-d blob classifier trained one epoch at a time. The page constructs one
/// trainer per objective and steps them side by side.
#[wasm_bindgen]
pub struct ToyTrainer {
    net: SplitNetwork,
    train: Dataset,
    test: Dataset,
    obj: ObjectiveConfig,
    state: OptimizerState,
    seed: u64,
    epochs_done: usize,
}

#[derive(Serialize)]
struct ToySnapshot {
    epoch: usize,
    accuracy: f64,
    sigma: Vec<f64>,
    robustness: Vec<f64>,
    /// Mean of the robustness curve.
    aggregate: f64,
    /// Row-major predicted classes on a MAP_SIDE x MAP_SIDE grid over [0,1]^2.
    map_side: usize,
    map: Vec<u8>,
    points_x: Vec<f64>,
    points_y: Vec<f64>,
    points_label: Vec<u8>,
}

#[wasm_bindgen]
impl ToyTrainer {
    /// `mode` is `baseline`, `augmentation`, or `moment-regularizer`; `alpha`,
    /// `sigma`, and `n_tilde` are ignored where the mode does not use them.
    #[wasm_bindgen(constructor)]
    pub fn new(
        mode: &str,
        alpha: f64,
        sigma: f64,
        n_tilde: u32,
        seed: u32,
    ) -> Result<ToyTrainer, JsError> {
        let mode: ObjectiveMode = mode.parse()?;
        let noise = NoiseSpec::isotropic_std(sigma)?;
        let obj = match mode {
            ObjectiveMode::Baseline => ObjectiveConfig::baseline(),
            ObjectiveMode::Augmentation => {
                ObjectiveConfig::augmentation(alpha, noise, n_tilde.max(1) as usize)
            }
            ObjectiveMode::MomentRegularizer => ObjectiveConfig::moment_regularizer(alpha, noise),
        };
        obj.validate()?;

        let seed = seed as u64;
        let mut r = rng::stream(seed, &[STREAM_DEMO, 4]);
        let upsilon = seeded_dense(2, TOY_HIDDEN, &mut r);
        let omega = vec![
            seeded_dense(TOY_HIDDEN, TOY_HIDDEN, &mut r),
            Layer::Relu,
            seeded_dense(TOY_HIDDEN, 2, &mut r),
        ];
        let net = SplitNetwork::new("demo-toy", vec![2], 2, upsilon, omega)?;
        let sizes: Vec<usize> = net.param_views().iter().map(|(_, t)| t.numel()).collect();
        Ok(ToyTrainer {
            net,
            train: data::synthetic_blobs(TOY_TRAIN, seed),
            test: data::synthetic_blobs(TOY_TEST, seed ^ 0x5151),
            obj,
            state: OptimizerState::new(OptimizerKind::Adam, &sizes),
            seed,
            epochs_done: 0,
        })
    }

    /// One shuffled pass over the training set; returns the mean train loss.
    pub fn run_epoch(&mut self) -> Result<f64, JsError> {
        self.epochs_done += 1;
        let epoch = self.epochs_done as u64;
        let mut shuffle = rng::stream(self.seed, &[STREAM_DEMO, 5, epoch]);
        let perm = rng::permutation(&mut shuffle, self.train.len());
        let mut total = 0.0;
        for (bi, chunk) in perm.chunks(TOY_MINIBATCH).enumerate() {
            let (x, y) = self.train.gather(chunk)?;
            let mut g = Graph::new();
            let staged = self.net.stage(&mut g, true);
            let mut noise_rng = rng::stream(self.seed, &[STREAM_DEMO, 6, epoch, bi as u64]);
            let loss = objective::loss_on(&mut g, &staged, &x, &y, &self.obj, &mut noise_rng)?;
            let loss_val = g.value(loss).data()[0];
            if !loss_val.is_finite() {
                return Err(JsError::new("training loss diverged; reset the trainer"));
            }
            total += loss_val * chunk.len() as f64;
            g.backward(loss)?;
            let grads: Vec<Vec<f64>> = staged
                .param_ids()
                .iter()
                .map(|&id| g.grad(id).expect("trainable parameter").to_vec())
                .collect();
            drop(g);
            optim::optimizer_step(
                &mut self.net.param_views_mut(),
                &grads,
                &mut self.state,
                TOY_LR,
                0.0,
            )?;
        }
        Ok(total / self.train.len() as f64)
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Test accuracy, robustness curve, decision map, and the training points.
    pub fn snapshot(&self) -> Result<String, JsError> {
        let accuracy = optim::evaluate_accuracy(&self.net, &self.test, 64)?;
        let cfg = RobustnessConfig {
            sigma_grid: (1..=15).map(|k| k as f64 * 0.02).collect(),
            m: 3,
            mode: NoiseMode::GaussianSamples,
            seed: self.seed,
        };
        let report = robustness::robustness_sweep(&self.net, &self.test, &cfg)?;

        let side = MAP_SIDE;
        let mut grid = Vec::with_capacity(side * side * 2);
        for row in 0..side {
            let y = (row as f64 + 0.5) / side as f64;
            for col in 0..side {
                let x = (col as f64 + 0.5) / side as f64;
                grid.push(x);
                grid.push(y);
            }
        }
        let grid = Tensor::new(vec![side * side, 2], grid)?;
        let map: Vec<u8> = self.net.predict(&grid)?.iter().map(|&c| c as u8).collect();

        let pts = self.train.images().data();
        let snapshot = ToySnapshot {
            epoch: self.epochs_done,
            accuracy,
            sigma: report.per_sigma.iter().map(|&(s, _)| s).collect(),
            robustness: report.per_sigma.iter().map(|&(_, v)| v).collect(),
            aggregate: report.aggregate,
            map_side: side,
            map,
            points_x: pts.iter().step_by(2).copied().collect(),
            points_y: pts.iter().skip(1).step_by(2).copied().collect(),
            points_label: self.train.labels().iter().map(|&l| l as u8).collect(),
        };
        to_json(&snapshot)
    }
}
