//! `gaussnet`: train, sweep, and compare noise-robust networks from the
//! command line.
//!
//! Every subcommand is a thin wrapper over the library harness. Flags
//! override the corresponding config-file fields. Exit codes: 0 success,
//! 1 usage or invalid configuration, 2 missing or malformed data, 3
//! numerical failure during training.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use gaussnet::error::{Error, Result};
use gaussnet::harness::{
    compare, emit_plots, load_dataset, load_summary, load_trained, run_experiment,
    ComparisonRecord, ExperimentConfig, ExperimentOutcome, ObjectiveSection, SweepConfig,
    TrainSection,
};
use gaussnet::nets::ArchitectureId;
use gaussnet::objective::ObjectiveMode;
use gaussnet::robustness::{robustness_sweep, RobustnessConfig};

#[derive(Parser)]
#[command(
    name = "gaussnet",
    version,
    about = "Train ReLU networks that stay accurate under Gaussian input noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file and persist its results.
    Train(TrainArgs),
    /// Re-evaluate a completed run: clean accuracy plus a robustness sweep.
    Eval(EvalArgs),
    /// Expand a grid config and run every experiment in it.
    Sweep(SweepArgs),
    /// Build the accuracy-matched comparison table across completed runs.
    Compare(CompareArgs),
    /// Emit CSV data files and SVG charts for completed runs.
    Plot(PlotArgs),
    /// End-to-end self check on a synthetic dataset; needs no data files.
    Smoke(SmokeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config file (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Redo the run even if a completed summary exists.
    #[arg(long)]
    force: bool,
    /// Override the experiment id.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Objective: baseline, augmentation, or moment-regularizer.
    #[arg(long)]
    mode: Option<ObjectiveMode>,
    /// Trade-off coefficient on the noise term.
    #[arg(long)]
    alpha: Option<f64>,
    /// Training noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Noisy replicas per clean example (augmentation only).
    #[arg(long)]
    n_tilde: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    minibatch_size: Option<usize>,
    #[arg(long)]
    lr_initial: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep robustness over only the first N test examples.
    #[arg(long)]
    test_subset: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of a completed run (config.toml + checkpoint.bin).
    #[arg(long, value_name = "DIR")]
    run: PathBuf,
    /// Evaluate only the first N test examples.
    #[arg(long)]
    test_subset: Option<usize>,
    /// Noise draws per (example, sigma) grid point.
    #[arg(long)]
    m: Option<usize>,
    /// Seed for the evaluation noise streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated sigma grid overriding the run's config.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    sigma_grid: Option<Vec<f64>>,
    /// Write the per-sigma CSV here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep grid config file (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Redo completed runs instead of skipping them.
    #[arg(long)]
    force: bool,
    /// Experiments to run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// List the expanded experiment ids without running anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Accuracy allowance below the baseline, as a fraction
    /// (0.0039 admits runs within 0.39 points).
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
    /// Write the winner table as CSV here as well.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Run directories, or parent directories of runs.
    #[arg(required = true, value_name = "DIR")]
    runs: Vec<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory receiving the CSV and SVG files.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Run directories, or parent directories of runs.
    #[arg(required = true, value_name = "DIR")]
    runs: Vec<PathBuf>,
}

#[derive(Args)]
struct SmokeArgs {
    /// Keep artifacts here instead of a throwaway temp directory.
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    max_epochs: usize,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Plot(args) => cmd_plot(args),
        Command::Smoke(args) => cmd_smoke(args),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_toml_file(&args.config)?;
    if let Some(id) = args.id {
        cfg.id = id;
    }
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    if let Some(dir) = args.data_dir {
        cfg.data_dir = Some(dir);
    }
    if let Some(mode) = args.mode {
        cfg.objective.mode = mode;
    }
    if let Some(alpha) = args.alpha {
        cfg.objective.alpha = alpha;
    }
    if let Some(sigma) = args.sigma {
        cfg.objective.sigma = sigma;
    }
    if let Some(n) = args.n_tilde {
        cfg.objective.n_tilde = n;
    }
    if let Some(n) = args.max_epochs {
        cfg.train.max_epochs = Some(n);
    }
    if let Some(n) = args.minibatch_size {
        cfg.train.minibatch_size = Some(n);
    }
    if let Some(lr) = args.lr_initial {
        cfg.train.lr_initial = Some(lr);
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = Some(seed);
    }
    if let Some(n) = args.test_subset {
        cfg.test_subset = Some(n);
    }
    let outcome = run_experiment(&cfg, args.force)?;
    if outcome.report.is_none() {
        println!("reusing completed run (pass --force to redo)");
    }
    print_record(&outcome, &cfg.experiment_dir());
    Ok(())
}

fn print_record(outcome: &ExperimentOutcome, dir: &Path) {
    let r = &outcome.record;
    println!("experiment       {}", r.id);
    println!("mode             {}", r.mode);
    println!("training sigma   {}", r.train_sigma);
    println!("alpha            {}", r.alpha);
    if r.mode == ObjectiveMode::Augmentation {
        println!("n_tilde          {}", r.n_tilde);
    }
    if let Some(report) = &outcome.report {
        println!("epochs run       {}", report.epochs.len());
        if let (Some(best), Some(loss)) = (report.best_epoch, report.best_val_loss) {
            println!("best epoch       {best} (val loss {loss:.6})");
        }
    }
    println!("clean accuracy   {:.4}", r.accuracy);
    println!("robustness       {:.4}", r.robustness);
    println!("wall seconds     {:.1}", r.wall_seconds);
    println!("results in       {}", dir.display());
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (mut cfg, net) = load_trained(&args.run)?;
    if let Some(n) = args.test_subset {
        cfg.test_subset = Some(n);
    }
    let mut rob_cfg: RobustnessConfig = cfg.robustness.clone();
    if let Some(grid) = args.sigma_grid {
        rob_cfg.sigma_grid = grid;
    }
    if let Some(m) = args.m {
        rob_cfg.m = m;
    }
    if let Some(seed) = args.seed {
        rob_cfg.seed = seed;
    }
    rob_cfg.validate()?;
    let (_, test) = load_dataset(&cfg)?;
    let test = match cfg.test_subset {
        Some(n) => test.take(n)?,
        None => test,
    };
    let report = robustness_sweep(&net, &test, &rob_cfg)?;
    println!("model            {} ({})", report.metadata.model_id, cfg.arch);
    println!("test examples    {}", test.len());
    println!("clean accuracy   {:.4}", report.clean_accuracy);
    println!("robustness       {:.4}", report.aggregate);
    match args.out {
        Some(path) => {
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            report.write_csv(&mut f)?;
            f.flush().map_err(|e| Error::io(&path, e))?;
            println!("per-sigma csv    {}", path.display());
        }
        None => {
            let mut out = Vec::new();
            report.write_csv(&mut out)?;
            print!("{}", String::from_utf8_lossy(&out));
        }
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let sweep = SweepConfig::from_toml_file(&args.config)?;
    let configs = sweep.expand()?;
    if args.dry_run {
        for cfg in &configs {
            println!("{}", cfg.id);
        }
        println!("{} experiments", configs.len());
        return Ok(());
    }
    let jobs = args.jobs.max(1);
    if jobs == 1 {
        for cfg in &configs {
            sweep_one(cfg, args.force)?;
        }
    } else {
        // Experiments are independent: each owns its output directory and
        // all randomness is derived from per-run seeds.
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let results: Vec<Result<()>> = pool.install(|| {
            configs
                .par_iter()
                .map(|cfg| sweep_one(cfg, args.force))
                .collect()
        });
        for r in results {
            r?;
        }
    }
    println!("{} experiments complete in {}", configs.len(), sweep.output_dir.display());
    Ok(())
}

fn sweep_one(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let outcome = run_experiment(cfg, force)?;
    let note = if outcome.report.is_none() { " (reused)" } else { "" };
    println!(
        "{}: accuracy {:.4} robustness {:.4}{note}",
        cfg.id, outcome.record.accuracy, outcome.record.robustness
    );
    Ok(())
}

/// Accepts run directories directly or scans one level down, so a sweep's
/// whole output root can be passed as-is.
fn collect_records(paths: &[PathBuf]) -> Result<Vec<ComparisonRecord>> {
    let mut records = Vec::new();
    for path in paths {
        let mut dirs = Vec::new();
        if path.join("summary.json").is_file() {
            dirs.push(path.clone());
        } else if path.is_dir() {
            let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(path, e))?;
                if entry.path().join("summary.json").is_file() {
                    dirs.push(entry.path());
                }
            }
            if dirs.is_empty() {
                return Err(Error::Usage(format!(
                    "{} contains no completed runs",
                    path.display()
                )));
            }
            dirs.sort();
        } else {
            return Err(Error::Usage(format!("{} is not a run directory", path.display())));
        }
        for dir in dirs {
            let summary = load_summary(&dir)?;
            if !summary.complete {
                return Err(Error::Usage(format!(
                    "{} is incomplete; rerun it before comparing",
                    dir.display()
                )));
            }
            records.push(summary.record);
        }
    }
    Ok(records)
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let records = collect_records(&args.runs)?;
    let table = compare(&records, args.tolerance)?;
    println!(
        "baseline accuracy {:.4}, tolerance {}, {} of {} runs within tolerance",
        table.baseline_accuracy,
        table.accuracy_tolerance,
        records.len() - table.excluded.len(),
        records.len()
    );
    println!(
        "{:<20} {:<28} {:>8} {:>8} {:>4} {:>9} {:>11}",
        "mode", "id", "sigma", "alpha", "n", "accuracy", "robustness"
    );
    for r in &table.winners {
        println!(
            "{:<20} {:<28} {:>8} {:>8} {:>4} {:>9.4} {:>11.4}",
            r.mode.to_string(),
            r.id,
            r.train_sigma,
            r.alpha,
            r.n_tilde,
            r.accuracy,
            r.robustness
        );
    }
    if !table.excluded.is_empty() {
        println!("excluded: {}", table.excluded.join(", "));
    }
    if let Some(path) = args.out {
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        table.write_csv(&mut f)?;
        println!("winner csv in {}", path.display());
    }
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    let records = collect_records(&args.runs)?;
    let files = emit_plots(&records, &args.out_dir)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(())
}

fn cmd_smoke(args: SmokeArgs) -> Result<()> {
    let (dir, _keep);
    match args.output_dir {
        Some(d) => {
            dir = d;
            _keep = None;
        }
        None => {
            let tmp = tempdir()?;
            dir = tmp.path().to_path_buf();
            _keep = Some(tmp);
        }
    }
    let cfg = ExperimentConfig {
        id: "smoke".into(),
        arch: ArchitectureId::LeNetMnist,
        dataset: "synthetic".into(),
        data_dir: None,
        output_dir: dir,
        test_subset: Some(16),
        objective: ObjectiveSection {
            mode: ObjectiveMode::MomentRegularizer,
            alpha: 1.0,
            sigma: 0.5,
            n_tilde: 1,
        },
        train: TrainSection {
            max_epochs: Some(args.max_epochs),
            minibatch_size: Some(64),
            ..TrainSection::default()
        },
        robustness: RobustnessConfig {
            sigma_grid: vec![0.1, 0.25, 0.5],
            ..RobustnessConfig::default()
        },
    };
    let outcome = run_experiment(&cfg, true)?;
    let summary = load_summary(&cfg.experiment_dir())?;
    if !summary.complete || !outcome.record.accuracy.is_finite() {
        return Err(Error::Config("smoke run left an incomplete summary".into()));
    }
    print_record(&outcome, &cfg.experiment_dir());
    println!("smoke test passed");
    Ok(())
}

/// Minimal self-cleaning temp dir so `smoke` leaves nothing behind by
/// default. Kept local to avoid a runtime dependency for one call site.
struct TempDirGuard(PathBuf);

impl TempDirGuard {
    fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for TempDirGuard {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

fn tempdir() -> Result<TempDirGuard> {
    let base = std::env::temp_dir();
    let pid = std::process::id();
    for attempt in 0..64 {
        let candidate = base.join(format!("gaussnet-smoke-{pid}-{attempt}"));
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(TempDirGuard(candidate)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&candidate, e)),
        }
    }
    Err(Error::io(base, std::io::Error::other("no free temp dir name")))
}
