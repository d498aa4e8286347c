//! The three training losses: clean cross-entropy, the Monte-Carlo noisy
//! augmentation objective, and the analytic expected-prediction regularizer.
//!
//! All three build onto a caller-supplied graph so the training loop owns a
//! single tape per step. The regularized objective reuses the clean pass's
//! pre-activation node, which is where its cost advantage over augmentation
//! comes from: one extra variance pass plus one extra second-stage pass,
//! independent of how many noisy copies augmentation would need.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data;
use crate::error::{Error, Result};
use crate::moments::{self, NoiseSpec};
use crate::nets::StagedNet;
use crate::tensor::{Graph, Tensor, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveMode {
    Baseline,
    Augmentation,
    MomentRegularizer,
}

impl ObjectiveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveMode::Baseline => "baseline",
            ObjectiveMode::Augmentation => "augmentation",
            ObjectiveMode::MomentRegularizer => "moment-regularizer",
        }
    }
}

impl fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ObjectiveMode::Baseline),
            "augmentation" => Ok(ObjectiveMode::Augmentation),
            "moment-regularizer" => Ok(ObjectiveMode::MomentRegularizer),
            other => Err(Error::Config(format!(
                "unknown objective mode '{other}' (expected baseline, augmentation, \
                 or moment-regularizer)"
            ))),
        }
    }
}

/// What to optimize: the mode plus its trade-off weight, training noise
/// level, and (for augmentation) the number of noisy copies per example.
#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    pub mode: ObjectiveMode,
    /// Weight alpha of the noise term; 0 reduces every mode to the clean loss.
    pub alpha: f64,
    /// Training-time input noise sigma_x.
    pub noise: NoiseSpec,
    /// Noisy copies per example in augmentation mode.
    pub n_tilde: usize,
}

impl ObjectiveConfig {
    pub fn baseline() -> Self {
        ObjectiveConfig {
            mode: ObjectiveMode::Baseline,
            alpha: 0.0,
            noise: NoiseSpec::isotropic_std(0.0).expect("zero std is valid"),
            n_tilde: 1,
        }
    }

    pub fn augmentation(alpha: f64, noise: NoiseSpec, n_tilde: usize) -> Self {
        ObjectiveConfig {
            mode: ObjectiveMode::Augmentation,
            alpha,
            noise,
            n_tilde,
        }
    }

    pub fn moment_regularizer(alpha: f64, noise: NoiseSpec) -> Self {
        ObjectiveConfig {
            mode: ObjectiveMode::MomentRegularizer,
            alpha,
            noise,
            n_tilde: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be a finite value >= 0, got {}",
                self.alpha
            )));
        }
        if self.n_tilde < 1 {
            return Err(Error::Config("n_tilde must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean cross-entropy of the clean forward pass.
pub fn baseline_loss(g: &mut Graph, net: &StagedNet, x: &Tensor, y: &[usize]) -> Result<VarId> {
    let xid = g.constant(x.clone());
    let logits = net.logits(g, xid)?;
    g.softmax_cross_entropy(logits, y)
}

/// Clean loss + (alpha / n_tilde) * sum of cross-entropies on n_tilde noisy
/// copies, noise drawn in row-major order from `rng`. alpha = 0 performs no
/// sampling at all, so the stream position is untouched.
pub fn augmented_loss(
    g: &mut Graph,
    net: &StagedNet,
    x: &Tensor,
    y: &[usize],
    cfg: &ObjectiveConfig,
    rng: &mut impl Rng,
) -> Result<VarId> {
    if cfg.mode != ObjectiveMode::Augmentation {
        return Err(Error::Usage(format!(
            "augmented_loss called with mode {}",
            cfg.mode
        )));
    }
    cfg.validate()?;
    let clean = baseline_loss(g, net, x, y)?;
    if cfg.alpha == 0.0 {
        return Ok(clean);
    }
    let mut noisy_sum: Option<VarId> = None;
    for _ in 0..cfg.n_tilde {
        let noisy = data::add_gaussian_noise(x, &cfg.noise, rng)?;
        let xid = g.constant(noisy);
        let logits = net.logits(g, xid)?;
        let ce = g.softmax_cross_entropy(logits, y)?;
        noisy_sum = Some(match noisy_sum {
            Some(acc) => g.add(acc, ce)?,
            None => ce,
        });
    }
    let total = noisy_sum.expect("n_tilde >= 1 after validate");
    let scaled = g.scale(total, cfg.alpha / cfg.n_tilde as f64);
    g.add(clean, scaled)
}

/// Clean loss + alpha * cross-entropy of the analytic expected prediction.
/// Deterministic; the clean pass's pre-activation feeds both branches, so
/// gradients flow into the first layer through the mean and the variance.
pub fn regularized_loss(
    g: &mut Graph,
    net: &StagedNet,
    x: &Tensor,
    y: &[usize],
    cfg: &ObjectiveConfig,
) -> Result<VarId> {
    if cfg.mode != ObjectiveMode::MomentRegularizer {
        return Err(Error::Usage(format!(
            "regularized_loss called with mode {}",
            cfg.mode
        )));
    }
    cfg.validate()?;
    let xid = g.constant(x.clone());
    let mu2 = net.preactivation(g, xid)?;
    let h = g.relu(mu2);
    let logits = net.omega_forward(g, h)?;
    let clean = g.softmax_cross_entropy(logits, y)?;
    if cfg.alpha == 0.0 {
        return Ok(clean);
    }
    if cfg.noise.is_zero() {
        // The expected prediction degenerates to the clean forward pass, so
        // the regularizer term is the clean loss itself.
        let scaled = g.scale(clean, cfg.alpha);
        return g.add(clean, scaled);
    }
    let expected = moments::expected_prediction_from_mu2(g, net, mu2, &cfg.noise)?;
    let reg = g.softmax_cross_entropy(expected, y)?;
    let scaled = g.scale(reg, cfg.alpha);
    g.add(clean, scaled)
}

/// Builds the loss configured by `cfg.mode`. The RNG is consumed only in
/// augmentation mode with alpha > 0.
pub fn loss_on(
    g: &mut Graph,
    net: &StagedNet,
    x: &Tensor,
    y: &[usize],
    cfg: &ObjectiveConfig,
    rng: &mut impl Rng,
) -> Result<VarId> {
    match cfg.mode {
        ObjectiveMode::Baseline => baseline_loss(g, net, x, y),
        ObjectiveMode::Augmentation => augmented_loss(g, net, x, y, cfg, rng),
        ObjectiveMode::MomentRegularizer => regularized_loss(g, net, x, y, cfg),
    }
}
