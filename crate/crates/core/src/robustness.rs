//! Additive-noise robustness: the probability that a prediction survives
//! input noise, relaxed to a 0/1 score per (example, sigma) and swept over a
//! sigma grid.
//!
//! An example scores 1 at a given sigma iff none of the m noisy copies
//! changes the clean prediction psi(x); ground-truth labels never enter.
//! Every (example, sigma) pair draws from its own derived RNG stream, so
//! results are independent of evaluation order and batching.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::SplitNetwork;
use crate::optim::evaluate_accuracy;
use crate::rng::{self, STREAM_ROBUST};
use crate::tensor::Tensor;

/// Examples per forward pass during evaluation.
const EVAL_BATCH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// One deterministic-energy draw: direction uniform, norm exactly
    /// sigma * sqrt(n), the expected energy of the Gaussian in high dimension.
    AverageEnergySample,
    /// Plain independent Gaussian draws of std sigma.
    GaussianSamples,
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMode::AverageEnergySample => "average-energy-sample",
            NoiseMode::GaussianSamples => "gaussian-samples",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    /// Noise levels to sweep. The default spans (0, 0.5] in 30 steps and
    /// deliberately excludes sigma = 0, which scores 1 on every example.
    #[serde(default = "default_sigma_grid")]
    pub sigma_grid: Vec<f64>,
    /// Noisy copies per (example, sigma); all must preserve the prediction.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_mode")]
    pub mode: NoiseMode,
    #[serde(default)]
    pub seed: u64,
}

pub fn default_sigma_grid() -> Vec<f64> {
    (1..=30).map(|k| 0.5 * k as f64 / 30.0).collect()
}

fn default_m() -> usize {
    1
}

fn default_mode() -> NoiseMode {
    NoiseMode::AverageEnergySample
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            sigma_grid: default_sigma_grid(),
            m: default_m(),
            mode: default_mode(),
            seed: 0,
        }
    }
}

impl RobustnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_grid.is_empty() {
            return Err(Error::Config("sigma grid must not be empty".into()));
        }
        if let Some(&bad) = self
            .sigma_grid
            .iter()
            .find(|s| !s.is_finite() || **s < 0.0)
        {
            return Err(Error::Config(format!(
                "sigma grid values must be finite and >= 0, got {bad}"
            )));
        }
        if self.m < 1 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessMetadata {
    pub model_id: String,
    pub seed: u64,
    pub sigma_grid: Vec<f64>,
    pub m: usize,
    pub mode: NoiseMode,
    /// True only if the grid was overridden to contain sigma = 0.
    pub includes_sigma_zero: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// (sigma, mean robustness over the test set), in grid order.
    pub per_sigma: Vec<(f64, f64)>,
    /// Mean of the per-sigma values.
    pub aggregate: f64,
    pub clean_accuracy: f64,
    pub metadata: RobustnessMetadata,
}

impl RobustnessReport {
    /// The `sigma,robustness` CSV consumed by the plotting pipeline.
    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        let io = |e| Error::io("robustness csv", e);
        writeln!(w, "sigma,robustness").map_err(io)?;
        for (sigma, value) in &self.per_sigma {
            writeln!(w, "{sigma},{value}").map_err(io)?;
        }
        Ok(())
    }
}

/// A Gaussian direction rescaled to norm exactly sigma * sqrt(numel), or the
/// zero tensor when sigma = 0. The all-zero draw (probability zero, but the
/// stream is finite) is redrawn.
pub fn sample_fixed_norm_noise(
    shape: &[usize],
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::Domain(format!(
            "noise std must be finite and >= 0, got {sigma}"
        )));
    }
    let n: usize = shape.iter().product();
    if n == 0 {
        return Err(Error::Shape {
            op: "sample_fixed_norm_noise",
            details: format!("empty shape {shape:?}"),
        });
    }
    let mut t = Tensor::zeros(shape);
    if sigma == 0.0 {
        return Ok(t);
    }
    let target = sigma * (n as f64).sqrt();
    loop {
        rng::fill_standard_normal(rng, t.data_mut());
        let norm = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let scale = target / norm;
            for v in t.data_mut() {
                *v *= scale;
            }
            return Ok(t);
        }
    }
}

/// One noise draw in the configured mode.
fn draw_noise(shape: &[usize], sigma: f64, mode: NoiseMode, rng: &mut impl Rng) -> Result<Tensor> {
    match mode {
        NoiseMode::AverageEnergySample => sample_fixed_norm_noise(shape, sigma, rng),
        NoiseMode::GaussianSamples => {
            let mut t = Tensor::zeros(shape);
            rng::fill_standard_normal(rng, t.data_mut());
            for v in t.data_mut() {
                *v *= sigma;
            }
            Ok(t)
        }
    }
}

fn example_stream(cfg: &RobustnessConfig, example_tag: u64, sigma_index: usize) -> ChaCha12Rng {
    rng::stream(cfg.seed, &[STREAM_ROBUST, example_tag, sigma_index as u64])
}

/// 0/1 robustness of one clean example at every grid sigma. `example_tag`
/// keys the noise stream; the sweep uses the test-set index, so evaluating
/// an example alone or inside a batch draws identical noise.
pub fn robustness_of_example(
    net: &SplitNetwork,
    x: &Tensor,
    cfg: &RobustnessConfig,
    example_tag: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let batch = x.clone().reshape(&shape)?;
    let clean = net.predict(&batch)?[0];
    let mut out = Vec::with_capacity(cfg.sigma_grid.len());
    for (k, &sigma) in cfg.sigma_grid.iter().enumerate() {
        let mut r = example_stream(cfg, example_tag, k);
        let mut ok = true;
        for _ in 0..cfg.m {
            let noise = draw_noise(x.shape(), sigma, cfg.mode, &mut r)?;
            let mut noisy = batch.clone();
            for (v, n) in noisy.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
            if net.predict(&noisy)?[0] != clean {
                ok = false;
                break;
            }
        }
        out.push(if ok { 1.0 } else { 0.0 });
    }
    Ok(out)
}

/// Sweeps the grid over a whole test set, batching forward passes.
pub fn robustness_sweep(
    net: &SplitNetwork,
    testset: &Dataset,
    cfg: &RobustnessConfig,
) -> Result<RobustnessReport> {
    cfg.validate()?;
    if testset.is_empty() {
        return Err(Error::Usage(
            "robustness sweep over an empty test set".into(),
        ));
    }
    let n = testset.len();
    let element_shape = testset.element_shape().to_vec();
    let indices: Vec<usize> = (0..n).collect();

    // Clean predictions psi(x), fixed before any noise is drawn.
    let mut psi = Vec::with_capacity(n);
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, _) = testset.gather(chunk)?;
        psi.extend(net.predict(&x)?);
    }
    let clean_accuracy = evaluate_accuracy(net, testset, EVAL_BATCH)?;

    let mut per_sigma = Vec::with_capacity(cfg.sigma_grid.len());
    for (k, &sigma) in cfg.sigma_grid.iter().enumerate() {
        let mut survived = vec![true; n];
        let mut streams: Vec<ChaCha12Rng> = (0..n)
            .map(|i| example_stream(cfg, i as u64, k))
            .collect();
        for _ in 0..cfg.m {
            for chunk in indices.chunks(EVAL_BATCH) {
                // Perturb only examples still in the running; the draw
                // happens regardless so stream positions stay aligned.
                let (mut x, _) = testset.gather(chunk)?;
                let elem: usize = element_shape.iter().product();
                for (row, &i) in chunk.iter().enumerate() {
                    let noise = draw_noise(&element_shape, sigma, cfg.mode, &mut streams[i])?;
                    let dst = &mut x.data_mut()[row * elem..(row + 1) * elem];
                    for (v, nz) in dst.iter_mut().zip(noise.data()) {
                        *v += nz;
                    }
                }
                let preds = net.predict(&x)?;
                for (row, &i) in chunk.iter().enumerate() {
                    survived[i] &= preds[row] == psi[i];
                }
            }
        }
        let mean = survived.iter().filter(|&&s| s).count() as f64 / n as f64;
        per_sigma.push((sigma, mean));
    }

    let aggregate = per_sigma.iter().map(|(_, v)| v).sum::<f64>() / per_sigma.len() as f64;
    Ok(RobustnessReport {
        per_sigma,
        aggregate,
        clean_accuracy,
        metadata: RobustnessMetadata {
            model_id: net.id.clone(),
            seed: cfg.seed,
            sigma_grid: cfg.sigma_grid.clone(),
            m: cfg.m,
            mode: cfg.mode,
            includes_sigma_zero: cfg.sigma_grid.contains(&0.0),
        },
    })
}
