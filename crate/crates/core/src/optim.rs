//! Optimizers, plateau learning-rate scheduling, early stopping, and the
//! minibatch training loop.
//!
//! Training is deterministic given (seed, config, dataset): the validation
//! split, per-epoch shuffles, and augmentation noise each come from their own
//! labelled RNG stream, so changing one consumer never perturbs the others.
//! Wall-clock seconds in the epoch log are the only non-reproducible field.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::{ArchitectureId, SplitNetwork};
use crate::objective::{self, ObjectiveConfig};
use crate::rng::{self, STREAM_AUG, STREAM_SHUFFLE, STREAM_SPLIT, STREAM_VAL};
use crate::tensor::save_checkpoint;
use crate::tensor::{Graph, Tensor};

/// Fixed Adam moment decays and epsilon; not exposed as knobs.
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Fixed SGD momentum (Nesterov, zero dampening).
const SGD_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!(
                "unknown optimizer '{other}' (expected adam or sgd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub minibatch_size: usize,
    pub lr_initial: f64,
    /// Epochs without validation improvement before the rate is cut.
    pub lr_patience: usize,
    pub lr_factor: f64,
    /// Epochs without validation improvement before training stops.
    pub loss_patience: usize,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// Schedule on the full training objective (regularizer/augmentation
    /// term included). Set false to monitor the clean loss instead.
    pub val_full_objective: bool,
}

impl TrainConfig {
    /// Per-architecture defaults: Adam at 1e-4 for the small nets, Nesterov
    /// SGD at 0.1 with weight decay for the large one.
    pub fn defaults_for(arch: ArchitectureId) -> TrainConfig {
        let common = |optimizer, minibatch_size, lr_initial, lr_patience, lr_factor,
                      loss_patience, weight_decay| TrainConfig {
            optimizer,
            minibatch_size,
            lr_initial,
            lr_patience,
            lr_factor,
            loss_patience,
            weight_decay,
            max_epochs: 100,
            seed: 0,
            val_fraction: 0.10,
            val_full_objective: true,
        };
        match arch {
            ArchitectureId::LeNetMnist | ArchitectureId::LeNetCifar => {
                common(OptimizerKind::Adam, 1000, 1e-4, 3, 0.9, 10, 0.0)
            }
            ArchitectureId::AlexNetCifar => {
                common(OptimizerKind::Sgd, 128, 0.1, 5, 0.5, 20, 5e-4)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 {
            return Err(Error::Config("minibatch_size must be at least 1".into()));
        }
        if !(self.lr_initial.is_finite() && self.lr_initial > 0.0) {
            return Err(Error::Config(format!(
                "lr_initial must be positive, got {}",
                self.lr_initial
            )));
        }
        if self.lr_patience < 1 || self.loss_patience < 1 {
            return Err(Error::Config(
                "lr_patience and loss_patience must be at least 1".into(),
            ));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!(
                "lr_factor must lie in (0, 1), got {}",
                self.lr_factor
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose validation loss was lowest; None when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub checkpoint_path: Option<PathBuf>,
    /// Clean test accuracy of the returned model, filled in by the caller
    /// once a test set has been evaluated.
    pub test_accuracy: Option<f64>,
}

/// Uniformly random, disjoint, exhaustive (train, validation) split,
/// deterministic in `seed` and independent of all other streams.
pub fn split_train_val(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    let n_val = (n as f64 * fraction).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::Config(format!(
            "fraction {fraction} of {n} examples leaves an empty split"
        )));
    }
    let mut r = rng::stream(seed, &[STREAM_SPLIT]);
    let perm = rng::permutation(&mut r, n);
    let val = ds.subset(&perm[..n_val])?;
    let train = ds.subset(&perm[n_val..])?;
    Ok((train, val))
}

/// Per-parameter optimizer state; `m` doubles as the SGD momentum buffer.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    step: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, param_sizes: &[usize]) -> OptimizerState {
        let zeros: Vec<Vec<f64>> = param_sizes.iter().map(|&n| vec![0.0; n]).collect();
        OptimizerState {
            kind,
            step: 0,
            m: zeros.clone(),
            v: match kind {
                OptimizerKind::Adam => zeros,
                OptimizerKind::Sgd => Vec::new(),
            },
        }
    }
}

/// One update of every parameter in place. Weight decay enters as an
/// additive lambda*w term on the gradient before either rule.
pub fn optimizer_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Usage(format!(
            "optimizer_step over {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.numel() != g.len() {
            return Err(Error::Shape {
                op: "optimizer_step",
                details: format!("{name}: {} values vs {} gradients", p.numel(), g.len()),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of {name}"),
                epoch: 0,
                batch: 0,
            });
        }
    }
    state.step += 1;
    match state.kind {
        OptimizerKind::Adam => {
            let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
            let step_size = lr / bc1;
            for (((_, p), g), (m, v)) in params
                .iter_mut()
                .zip(grads)
                .zip(state.m.iter_mut().zip(state.v.iter_mut()))
            {
                for (i, w) in p.data_mut().iter_mut().enumerate() {
                    let grad = g[i] + weight_decay * *w;
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad * grad;
                    let denom = v[i].sqrt() / bc2.sqrt() + ADAM_EPS;
                    *w -= step_size * m[i] / denom;
                }
            }
        }
        OptimizerKind::Sgd => {
            for (((_, p), g), b) in params.iter_mut().zip(grads).zip(state.m.iter_mut()) {
                for (i, w) in p.data_mut().iter_mut().enumerate() {
                    let grad = g[i] + weight_decay * *w;
                    b[i] = SGD_MOMENTUM * b[i] + grad;
                    // Nesterov look-ahead direction.
                    *w -= lr * (grad + SGD_MOMENTUM * b[i]);
                }
            }
        }
    }
    Ok(())
}

/// Cuts the learning rate by `factor` after `patience` consecutive epochs
/// without a strictly lower validation loss.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr_initial: f64, factor: f64, patience: usize) -> PlateauScheduler {
        PlateauScheduler {
            lr: lr_initial,
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's validation loss; returns the rate for the next epoch.
    pub fn plateau_update(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.factor;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Optional streaming outputs of a training run.
#[derive(Default)]
pub struct TrainSink<'a> {
    /// Receives a CSV header plus one row per epoch as they complete.
    pub epoch_csv: Option<&'a mut dyn Write>,
    /// Best-validation weights are persisted here at every improvement.
    pub checkpoint: Option<&'a Path>,
}

/// The objective value over a whole dataset: weighted mean of minibatch
/// losses (exact sample mean, since the loss is itself a batch mean).
/// `noise_tags` labels the stream that augmentation-mode noise draws from.
pub fn evaluate_loss(
    net: &SplitNetwork,
    ds: &Dataset,
    obj: &ObjectiveConfig,
    minibatch_size: usize,
    seed: u64,
    noise_tags: &[u64],
) -> Result<f64> {
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    for (bi, chunk) in indices.chunks(minibatch_size).enumerate() {
        let (x, y) = ds.gather(chunk)?;
        let mut g = Graph::new();
        let staged = net.stage(&mut g, false);
        let mut tags = noise_tags.to_vec();
        tags.push(bi as u64);
        let mut r = rng::stream(seed, &tags);
        let loss = objective::loss_on(&mut g, &staged, &x, &y, obj, &mut r)?;
        total += g.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

/// Mean prediction accuracy over a dataset, evaluated in minibatches.
pub fn evaluate_accuracy(net: &SplitNetwork, ds: &Dataset, minibatch_size: usize) -> Result<f64> {
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut hits = 0.0;
    for chunk in indices.chunks(minibatch_size) {
        let (x, y) = ds.gather(chunk)?;
        let preds = net.predict(&x)?;
        hits += preds.iter().zip(&y).filter(|(p, t)| p == t).count() as f64;
    }
    Ok(hits / ds.len() as f64)
}

/// Runs the full loop: shuffled minibatches, per-epoch validation of the
/// training objective, plateau scheduling, early stopping, and restoration
/// of the best-validation weights into `net`.
pub fn train(
    net: &mut SplitNetwork,
    dataset: &Dataset,
    obj: &ObjectiveConfig,
    cfg: &TrainConfig,
    mut sink: TrainSink<'_>,
) -> Result<TrainReport> {
    cfg.validate()?;
    obj.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let (train_set, val_set) = split_train_val(dataset, cfg.val_fraction, cfg.seed)?;
    let val_obj = if cfg.val_full_objective {
        obj.clone()
    } else {
        ObjectiveConfig::baseline()
    };

    let sizes: Vec<usize> = net.param_views().iter().map(|(_, t)| t.numel()).collect();
    let mut state = OptimizerState::new(cfg.optimizer, &sizes);
    let mut scheduler = PlateauScheduler::new(cfg.lr_initial, cfg.lr_factor, cfg.lr_patience);

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: None,
        best_val_loss: None,
        checkpoint_path: sink.checkpoint.map(Path::to_path_buf),
        test_accuracy: None,
    };
    let mut best_weights: Option<Vec<Tensor>> = None;
    let mut stall = 0usize;

    if let Some(csv) = sink.epoch_csv.as_deref_mut() {
        writeln!(csv, "epoch,train_loss,val_loss,lr,seconds")
            .map_err(|e| Error::io("epoch log", e))?;
    }

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr = scheduler.lr();
        let mut shuffle = rng::stream(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]);
        let perm = rng::permutation(&mut shuffle, train_set.len());
        let mut train_loss = 0.0;

        for (bi, chunk) in perm.chunks(cfg.minibatch_size).enumerate() {
            let (x, y) = train_set.gather(chunk)?;
            let mut g = Graph::new();
            let staged = net.stage(&mut g, true);
            let mut noise_rng = rng::stream(cfg.seed, &[STREAM_AUG, epoch as u64, bi as u64]);
            let loss = objective::loss_on(&mut g, &staged, &x, &y, obj, &mut noise_rng)?;
            let loss_val = g.value(loss).data()[0];
            if !loss_val.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss".into(),
                    epoch,
                    batch: bi,
                });
            }
            train_loss += loss_val * chunk.len() as f64;
            g.backward(loss)?;
            let grads: Vec<Vec<f64>> = staged
                .param_ids()
                .iter()
                .map(|&id| g.grad(id).expect("trainable parameter").to_vec())
                .collect();
            drop(g);
            optimizer_step(
                &mut net.param_views_mut(),
                &grads,
                &mut state,
                lr,
                cfg.weight_decay,
            )
            .map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, epoch, batch: bi },
                other => other,
            })?;
        }
        train_loss /= train_set.len() as f64;

        let val_loss = evaluate_loss(
            net,
            &val_set,
            &val_obj,
            cfg.minibatch_size,
            cfg.seed,
            &[STREAM_VAL, epoch as u64],
        )?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite {
                what: "validation loss".into(),
                epoch,
                batch: 0,
            });
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(csv) = sink.epoch_csv.as_deref_mut() {
            writeln!(
                csv,
                "{},{:.17e},{:.17e},{:.17e},{:.3}",
                record.epoch, record.train_loss, record.val_loss, record.lr, record.seconds
            )
            .map_err(|e| Error::io("epoch log", e))?;
        }
        report.epochs.push(record);

        if report.best_val_loss.is_none_or(|best| val_loss < best) {
            report.best_val_loss = Some(val_loss);
            report.best_epoch = Some(epoch);
            best_weights = Some(net.param_views().iter().map(|(_, t)| (*t).clone()).collect());
            stall = 0;
            if let Some(path) = sink.checkpoint {
                save_checkpoint(path, &net.to_checkpoint(cfg.seed))?;
            }
        } else {
            stall += 1;
            if stall >= cfg.loss_patience {
                break;
            }
        }
        scheduler.plateau_update(val_loss);
    }

    if let Some(weights) = best_weights {
        for ((_, dst), src) in net.param_views_mut().into_iter().zip(weights) {
            *dst = src;
        }
    } else if let Some(path) = sink.checkpoint {
        // No epoch ran; persist the initial weights so the artifact exists.
        save_checkpoint(path, &net.to_checkpoint(cfg.seed))?;
    }
    Ok(report)
}
