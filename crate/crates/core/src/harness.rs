//! Experiment orchestration: TOML-configured runs, result persistence, the
//! accuracy-matched comparison protocol, and chart emission.
//!
//! Each experiment owns one directory under its configured output root:
//! a resolved copy of the config, the per-epoch training log, the robustness
//! sweep, the best-validation checkpoint, and a JSON summary. A summary whose
//! `complete` flag is true makes the run idempotent; anything else is
//! treated as a partial result and redone.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::moments::NoiseSpec;
use crate::nets::{build_model, ArchitectureId};
use crate::objective::{ObjectiveConfig, ObjectiveMode};
use crate::optim::{self, TrainConfig, TrainReport, TrainSink};
use crate::robustness::{robustness_sweep, RobustnessConfig};

/// Training-noise and trade-off settings as they appear in config files.
/// `sigma` is the isotropic input-noise standard deviation sigma_x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub mode: ObjectiveMode,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_n_tilde")]
    pub n_tilde: usize,
}

fn default_n_tilde() -> usize {
    1
}

impl ObjectiveSection {
    pub fn to_config(&self) -> Result<ObjectiveConfig> {
        let cfg = ObjectiveConfig {
            mode: self.mode,
            alpha: self.alpha,
            noise: NoiseSpec::isotropic_std(self.sigma)?,
            n_tilde: self.n_tilde,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Training hyperparameters as config-file overrides; anything left unset
/// falls back to the architecture's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<crate::optim::OptimizerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minibatch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_full_objective: Option<bool>,
}

impl TrainSection {
    pub fn resolve(&self, arch: ArchitectureId) -> TrainConfig {
        let d = TrainConfig::defaults_for(arch);
        TrainConfig {
            optimizer: self.optimizer.unwrap_or(d.optimizer),
            minibatch_size: self.minibatch_size.unwrap_or(d.minibatch_size),
            lr_initial: self.lr_initial.unwrap_or(d.lr_initial),
            lr_patience: self.lr_patience.unwrap_or(d.lr_patience),
            lr_factor: self.lr_factor.unwrap_or(d.lr_factor),
            loss_patience: self.loss_patience.unwrap_or(d.loss_patience),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            seed: self.seed.unwrap_or(d.seed),
            val_fraction: self.val_fraction.unwrap_or(d.val_fraction),
            val_full_objective: self.val_full_objective.unwrap_or(d.val_full_objective),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> TrainSection {
        TrainSection {
            optimizer: Some(cfg.optimizer),
            minibatch_size: Some(cfg.minibatch_size),
            lr_initial: Some(cfg.lr_initial),
            lr_patience: Some(cfg.lr_patience),
            lr_factor: Some(cfg.lr_factor),
            loss_patience: Some(cfg.loss_patience),
            weight_decay: Some(cfg.weight_decay),
            max_epochs: Some(cfg.max_epochs),
            seed: Some(cfg.seed),
            val_fraction: Some(cfg.val_fraction),
            val_full_objective: Some(cfg.val_full_objective),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub arch: ArchitectureId,
    /// One of `mnist`, `cifar10`, `cifar100`, or `synthetic`.
    pub dataset: String,
    /// Directory holding the dataset files; defaults to `data/<dataset>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Robustness is evaluated on the first N test examples when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subset: Option<usize>,
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub robustness: RobustnessConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<ExperimentConfig> {
        toml::from_str(text)
            .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    pub fn from_toml_file(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize: {e}")))
    }

    pub fn resolved_train(&self) -> TrainConfig {
        self.train.resolve(self.arch)
    }

    /// Same experiment with every training field pinned, for persistence.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut out = self.clone();
        out.train = TrainSection::from_config(&self.resolved_train());
        out
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .unwrap_or_else(|| Path::new("data").join(&self.dataset))
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(&self.id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty()
            || !self
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        {
            return Err(Error::Config(format!(
                "experiment id '{}' must be a non-empty [A-Za-z0-9._-] name",
                self.id
            )));
        }
        dataset_classes(&self.dataset)?;
        if self.dataset != "synthetic" {
            let shape_ok = match self.dataset.as_str() {
                "mnist" => self.arch == ArchitectureId::LeNetMnist,
                _ => self.arch != ArchitectureId::LeNetMnist,
            };
            if !shape_ok {
                return Err(Error::Config(format!(
                    "architecture {} expects input shape {:?}, which {} does not provide",
                    self.arch,
                    self.arch.input_shape(),
                    self.dataset
                )));
            }
        }
        if self.test_subset == Some(0) {
            return Err(Error::Config("test_subset must be at least 1".into()));
        }
        self.objective.to_config()?;
        self.resolved_train().validate()?;
        self.robustness.validate()?;
        Ok(())
    }
}

fn dataset_classes(name: &str) -> Result<usize> {
    match name {
        "mnist" | "cifar10" | "synthetic" => Ok(10),
        "cifar100" => Ok(100),
        other => Err(Error::Config(format!(
            "unknown dataset '{other}' (expected mnist, cifar10, cifar100, or synthetic)"
        ))),
    }
}

/// Loads (train, test) for an experiment. The synthetic dataset is generated
/// to the architecture's input shape and needs no files on disk.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let classes = dataset_classes(&cfg.dataset)?;
    let dir = cfg.dataset_dir();
    match cfg.dataset.as_str() {
        "mnist" => data::load_mnist(&dir),
        "cifar10" => data::load_cifar(&dir, data::CifarVariant::Ten),
        "cifar100" => data::load_cifar(&dir, data::CifarVariant::Hundred),
        "synthetic" => {
            let shape = cfg.arch.input_shape();
            let train = data::synthetic_images(512, &shape, classes, 100)?;
            let test = data::synthetic_images(128, &shape, classes, 200)?;
            Ok((train, test))
        }
        other => Err(Error::Config(format!("unknown dataset '{other}'"))),
    }
}

/// One experiment's headline numbers, as consumed by `compare` and the plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub id: String,
    pub mode: ObjectiveMode,
    pub train_sigma: f64,
    pub alpha: f64,
    pub n_tilde: usize,
    pub accuracy: f64,
    /// Aggregate robustness over the sweep grid.
    pub robustness: f64,
    pub per_sigma: Vec<(f64, f64)>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    /// False while the run is in flight; partial artifacts are not trusted.
    pub complete: bool,
    pub record: ComparisonRecord,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
}

pub fn summary_path(dir: &Path) -> PathBuf {
    dir.join("summary.json")
}

pub fn load_summary(dir: &Path) -> Result<ExperimentSummary> {
    let path = summary_path(dir);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, 0, e.to_string()))
}

fn write_summary(dir: &Path, summary: &ExperimentSummary) -> Result<()> {
    let path = summary_path(dir);
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Config(format!("serialize summary: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// The full outcome of [`run_experiment`]; `report` is present only when the
/// training actually ran in this process (not when the summary was reused).
pub struct ExperimentOutcome {
    pub record: ComparisonRecord,
    pub report: Option<TrainReport>,
}

/// Trains, evaluates clean accuracy, sweeps robustness, and persists
/// everything under `<output_dir>/<id>/`. A prior completed run with the
/// same id short-circuits unless `force` is set.
pub fn run_experiment(cfg: &ExperimentConfig, force: bool) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let dir = cfg.experiment_dir();
    if !force {
        if let Ok(prior) = load_summary(&dir) {
            if prior.complete {
                return Ok(ExperimentOutcome {
                    record: prior.record,
                    report: None,
                });
            }
        }
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config_copy = dir.join("config.toml");
    fs::write(&config_copy, cfg.resolved().to_toml_string()?)
        .map_err(|e| Error::io(&config_copy, e))?;

    let started = Instant::now();
    let (train_set, test_set) = load_dataset(cfg)?;
    let objective = cfg.objective.to_config()?;
    let train_cfg = cfg.resolved_train();
    let mut net = build_model(cfg.arch, train_set.classes, train_cfg.seed)?;

    // Mark the run in flight so a crash leaves an obviously partial summary.
    let placeholder = ComparisonRecord {
        id: cfg.id.clone(),
        mode: cfg.objective.mode,
        train_sigma: cfg.objective.sigma,
        alpha: cfg.objective.alpha,
        n_tilde: cfg.objective.n_tilde,
        accuracy: f64::NAN,
        robustness: f64::NAN,
        per_sigma: Vec::new(),
        wall_seconds: 0.0,
    };
    write_summary(
        &dir,
        &ExperimentSummary {
            complete: false,
            record: placeholder,
            best_epoch: None,
            epochs_run: 0,
        },
    )?;

    let epochs_path = dir.join("epochs.csv");
    let mut epochs_file = fs::File::create(&epochs_path).map_err(|e| Error::io(&epochs_path, e))?;
    let checkpoint_path = dir.join("checkpoint.bin");
    let mut report = optim::train(
        &mut net,
        &train_set,
        &objective,
        &train_cfg,
        TrainSink {
            epoch_csv: Some(&mut epochs_file),
            checkpoint: Some(&checkpoint_path),
        },
    )?;
    epochs_file.flush().map_err(|e| Error::io(&epochs_path, e))?;

    let accuracy = optim::evaluate_accuracy(&net, &test_set, train_cfg.minibatch_size)?;
    report.test_accuracy = Some(accuracy);

    let sweep_set = match cfg.test_subset {
        Some(n) => test_set.take(n)?,
        None => test_set,
    };
    let rob = robustness_sweep(&net, &sweep_set, &cfg.robustness)?;
    let rob_path = dir.join("robustness.csv");
    let mut rob_file = fs::File::create(&rob_path).map_err(|e| Error::io(&rob_path, e))?;
    rob.write_csv(&mut rob_file)?;

    let record = ComparisonRecord {
        id: cfg.id.clone(),
        mode: cfg.objective.mode,
        train_sigma: cfg.objective.sigma,
        alpha: cfg.objective.alpha,
        n_tilde: cfg.objective.n_tilde,
        accuracy,
        robustness: rob.aggregate,
        per_sigma: rob.per_sigma.clone(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_summary(
        &dir,
        &ExperimentSummary {
            complete: true,
            record: record.clone(),
            best_epoch: report.best_epoch,
            epochs_run: report.epochs.len(),
        },
    )?;
    Ok(ExperimentOutcome {
        record,
        report: Some(report),
    })
}

/// Rebuilds the trained network persisted in a run directory from its
/// resolved config copy and checkpoint.
pub fn load_trained(dir: &Path) -> Result<(ExperimentConfig, crate::nets::SplitNetwork)> {
    let cfg = ExperimentConfig::from_toml_file(&dir.join("config.toml"))?;
    let classes = dataset_classes(&cfg.dataset)?;
    let mut net = build_model(cfg.arch, classes, cfg.resolved_train().seed)?;
    let ckpt = crate::tensor::load_checkpoint(&dir.join("checkpoint.bin"))?;
    net.load_weights(&ckpt)?;
    Ok((cfg, net))
}

/// A Cartesian experiment grid as it appears in sweep config files. Each
/// mode expands against the noise/trade-off axes that apply to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub id_prefix: String,
    pub arch: ArchitectureId,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subset: Option<usize>,
    pub grid: GridSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub robustness: RobustnessConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub modes: Vec<ObjectiveMode>,
    #[serde(default = "zero_axis")]
    pub sigmas: Vec<f64>,
    #[serde(default = "zero_axis")]
    pub alphas: Vec<f64>,
    #[serde(default = "unit_axis")]
    pub n_tildes: Vec<usize>,
}

fn zero_axis() -> Vec<f64> {
    vec![0.0]
}

fn unit_axis() -> Vec<usize> {
    vec![1]
}

impl SweepConfig {
    pub fn from_toml_file(path: &Path) -> Result<SweepConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Expands the grid into one validated config per combination. Baseline
    /// ignores every axis; the regularizer ignores the replication axis.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        if self.grid.modes.is_empty() {
            return Err(Error::Config("sweep grid lists no modes".into()));
        }
        let mut out: Vec<ExperimentConfig> = Vec::new();
        for &mode in &self.grid.modes {
            match mode {
                ObjectiveMode::Baseline => {
                    out.push(self.config_for(
                        format!("{}-baseline", self.id_prefix),
                        ObjectiveSection {
                            mode,
                            alpha: 0.0,
                            sigma: 0.0,
                            n_tilde: 1,
                        },
                    ));
                }
                ObjectiveMode::Augmentation => {
                    for &sigma in &self.grid.sigmas {
                        for &alpha in &self.grid.alphas {
                            for &n_tilde in &self.grid.n_tildes {
                                out.push(self.config_for(
                                    format!(
                                        "{}-aug-s{sigma}-a{alpha}-n{n_tilde}",
                                        self.id_prefix
                                    ),
                                    ObjectiveSection {
                                        mode,
                                        alpha,
                                        sigma,
                                        n_tilde,
                                    },
                                ));
                            }
                        }
                    }
                }
                ObjectiveMode::MomentRegularizer => {
                    for &sigma in &self.grid.sigmas {
                        for &alpha in &self.grid.alphas {
                            out.push(self.config_for(
                                format!("{}-reg-s{sigma}-a{alpha}", self.id_prefix),
                                ObjectiveSection {
                                    mode,
                                    alpha,
                                    sigma,
                                    n_tilde: 1,
                                },
                            ));
                        }
                    }
                }
            }
        }
        for cfg in &out {
            cfg.validate()?;
        }
        Ok(out)
    }

    fn config_for(&self, id: String, objective: ObjectiveSection) -> ExperimentConfig {
        ExperimentConfig {
            id,
            arch: self.arch,
            dataset: self.dataset.clone(),
            data_dir: self.data_dir.clone(),
            output_dir: self.output_dir.clone(),
            test_subset: self.test_subset,
            objective,
            train: self.train.clone(),
            robustness: self.robustness.clone(),
        }
    }
}

/// The accuracy-matched comparison: records below the baseline's accuracy
/// (minus the tolerance) are dropped, then the most robust survivor of each
/// mode is reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline_accuracy: f64,
    pub accuracy_tolerance: f64,
    /// Ids of records that failed the accuracy filter.
    pub excluded: Vec<String>,
    /// Best surviving record per mode, in mode declaration order.
    pub winners: Vec<ComparisonRecord>,
}

impl ComparisonTable {
    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        let io = |e| Error::io("comparison csv", e);
        writeln!(
            w,
            "id,mode,train_sigma,alpha,n_tilde,accuracy,robustness"
        )
        .map_err(io)?;
        for r in &self.winners {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.id, r.mode, r.train_sigma, r.alpha, r.n_tilde, r.accuracy, r.robustness
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

pub fn compare(records: &[ComparisonRecord], accuracy_tolerance: f64) -> Result<ComparisonTable> {
    if !(accuracy_tolerance.is_finite() && accuracy_tolerance >= 0.0) {
        return Err(Error::Config(format!(
            "accuracy tolerance must be >= 0, got {accuracy_tolerance}"
        )));
    }
    let baseline_accuracy = records
        .iter()
        .filter(|r| r.mode == ObjectiveMode::Baseline)
        .map(|r| r.accuracy)
        .fold(None, |best: Option<f64>, acc| {
            Some(best.map_or(acc, |b| b.max(acc)))
        })
        .ok_or_else(|| Error::Usage("comparison needs at least one baseline record".into()))?;

    let bar = baseline_accuracy - accuracy_tolerance;
    let (kept, excluded): (Vec<_>, Vec<_>) = records.iter().partition(|r| r.accuracy >= bar);
    let mut winners = Vec::new();
    for mode in [
        ObjectiveMode::Baseline,
        ObjectiveMode::Augmentation,
        ObjectiveMode::MomentRegularizer,
    ] {
        if let Some(best) = kept
            .iter()
            .filter(|r| r.mode == mode)
            .max_by(|a, b| a.robustness.total_cmp(&b.robustness))
        {
            winners.push((*best).clone());
        }
    }
    Ok(ComparisonTable {
        baseline_accuracy,
        accuracy_tolerance,
        excluded: excluded.iter().map(|r| r.id.clone()).collect(),
        winners,
    })
}

// -- plots -----------------------------------------------------------------

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Minimal deterministic SVG line chart: fixed canvas, 5 ticks per axis,
/// one polyline and legend entry per series.
fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (width, height) = (640.0, 480.0);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| top + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        left + plot_w / 2.0
    ));
    svg.push_str(&format!(
        "<rect x=\"{left}\" y=\"{top}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        svg.push_str(&format!(
            "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"#cccccc\"/>\n",
            px(xv),
            top,
            top + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.3}</text>\n",
            px(xv),
            top + plot_h + 16.0,
            xv
        ));
        svg.push_str(&format!(
            "<line x1=\"{1:.1}\" y1=\"{0:.1}\" x2=\"{2:.1}\" y2=\"{0:.1}\" stroke=\"#cccccc\"/>\n",
            py(yv),
            left,
            left + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>\n",
            left - 6.0,
            py(yv) + 4.0,
            yv
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>\n",
        left + plot_w / 2.0,
        height - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0:.1})\">{y_label}</text>\n",
        top + plot_h / 2.0
    ));
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        let ly = top + 14.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{0:.1}\" y1=\"{ly:.1}\" x2=\"{1:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            left + plot_w + 8.0,
            left + plot_w + 28.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            left + plot_w + 34.0,
            ly + 4.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the two data CSVs and two SVG charts for a record set, returning
/// the created paths. Output bytes depend only on the records.
pub fn emit_plots(records: &[ComparisonRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Usage("emit_plots needs at least one record".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut sorted: Vec<&ComparisonRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (a.mode.as_str(), &a.id).cmp(&(b.mode.as_str(), &b.id))
    });
    let mut written = Vec::new();
    let put = |name: &str, contents: String, written: &mut Vec<PathBuf>| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };

    let mut acc_csv = String::from("id,mode,train_sigma,accuracy,robustness\n");
    for r in &sorted {
        acc_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id, r.mode, r.train_sigma, r.accuracy, r.robustness
        ));
    }
    put("accuracy_vs_sigma.csv", acc_csv, &mut written)?;

    let mut curves_csv = String::from("id,mode,sigma,robustness\n");
    for r in &sorted {
        for &(s, v) in &r.per_sigma {
            curves_csv.push_str(&format!("{},{},{s},{v}\n", r.id, r.mode));
        }
    }
    put("robustness_curves.csv", curves_csv, &mut written)?;

    // Accuracy and aggregate robustness against training sigma, per mode.
    let mut acc_series: Vec<Series> = Vec::new();
    for mode in [
        ObjectiveMode::Baseline,
        ObjectiveMode::Augmentation,
        ObjectiveMode::MomentRegularizer,
    ] {
        let mut pts: Vec<(f64, f64)> = sorted
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| (r.train_sigma, r.accuracy))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !pts.is_empty() {
            acc_series.push(Series {
                label: mode.to_string(),
                points: pts,
            });
        }
    }
    put(
        "accuracy_vs_sigma.svg",
        line_chart(
            "clean accuracy vs training noise",
            "training sigma",
            "test accuracy",
            &acc_series,
        ),
        &mut written,
    )?;

    let curve_series: Vec<Series> = sorted
        .iter()
        .map(|r| Series {
            label: format!("{} ({})", r.id, r.mode),
            points: r.per_sigma.clone(),
        })
        .collect();
    put(
        "robustness_curves.svg",
        line_chart(
            "robustness across the evaluation grid",
            "evaluation sigma",
            "robustness",
            &curve_series,
        ),
        &mut written,
    )?;
    Ok(written)
}
