//! Command-line interface definition and dispatch.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use ginv_core::data::{SourceKind, SplitSizes};
use ginv_core::metrics::{EvalOptions, DEFAULT_IG_STEPS};
use ginv_core::regularizers::{RegForm, TrainMode};
use ginv_core::spectral::verify_proposition1;
use serde::Serialize;

use crate::audit::{self, DataChoice};
use crate::config::ConfigFile;
use crate::datasets::{self, parse_group, parse_source, parse_split};
use crate::error::{CliError, Result};
use crate::reproduce::{self, Artifact, ReproduceOptions};
use crate::runs::{self, LoadedRun, NuSetting, RunManifest, TrainOptions};

/// Prints a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "ginv", version, about = "Train and audit group-invariant networks")]
pub struct Cli {
    /// `key = value` file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and cache the train/val/test splits from IDX files.
    Prepare(PrepareArgs),
    /// Train one network and write checkpoint, history and manifest.
    Train(TrainArgs),
    /// Accuracy and invariance metrics of a checkpoint.
    Eval(EvalArgs),
    /// Metrics under a growing blend with the other dataset.
    Drift(DriftArgs),
    /// Input-Jacobian sensitivity of checkpoints, or the linear-flow checks.
    Spectral(SpectralArgs),
    /// Run a full experiment grid and aggregate over seeds.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory holding the MNIST IDX files.
    #[arg(long)]
    pub mnist: Option<PathBuf>,
    /// Directory holding the Fashion-MNIST IDX files.
    #[arg(long)]
    pub fmnist: Option<PathBuf>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub val_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// da, ir or wt.
    #[arg(long)]
    pub mode: Option<String>,
    /// r4 or t3.
    #[arg(long)]
    pub group: Option<String>,
    /// kl, l2 or l2n (IR only).
    #[arg(long)]
    pub reg_form: Option<String>,
    /// Regularizer weight or `auto` (IR only).
    #[arg(long)]
    pub nu: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// mnist or fmnist.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Train on the leading rows only.
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub val_limit: Option<usize>,
    /// Epochs per candidate when `--nu auto`.
    #[arg(long)]
    pub tune_epochs: Option<usize>,
    #[arg(long)]
    pub si_target: Option<f64>,
    /// Replace an existing run with the same id.
    #[arg(long)]
    pub overwrite: bool,
    /// Re-execute the run recorded in a manifest.
    #[arg(long, conflicts_with_all = ["mode", "group", "reg_form", "nu", "epochs"])]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory or checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// id, r4 or t3; defaults to the run's group.
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Evaluate the leading rows only.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Samples used for saliency similarity.
    #[arg(long)]
    pub si_samples: Option<usize>,
    #[arg(long)]
    pub ig_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DriftArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated blend weights in [0, 1].
    #[arg(long)]
    pub betas: Option<String>,
    #[arg(long)]
    pub pairing_seed: Option<u64>,
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    /// Run directories or checkpoint files.
    #[arg(long, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    /// Check spectral decay of the linear gradient flow instead.
    #[arg(long)]
    pub prop1: bool,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Test samples per checkpoint.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// table1, fig4 or fig5.
    pub artifact: String,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Comma-separated groups.
    #[arg(long)]
    pub groups: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Weight for IR runs (number or `auto`); defaults per group and form.
    #[arg(long)]
    pub nu: Option<String>,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[arg(long)]
    pub si_samples: Option<usize>,
    #[arg(long)]
    pub betas: Option<String>,
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| CliError::Usage(format!("{what} {p:?}: {e}"))))
        .collect()
}

fn usage<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

fn out_dir(cli_value: &Option<PathBuf>, cfg: &ConfigFile, default: &str) -> Result<PathBuf> {
    cfg.resolve(cli_value.clone(), "out_dir", PathBuf::from(default))
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = ConfigFile::load_opt(cli.config.as_deref())?;
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(&cli, &cfg, a),
        Command::Train(a) => cmd_train(&cli, &cfg, a),
        Command::Eval(a) => cmd_eval(&cli, &cfg, a),
        Command::Drift(a) => cmd_drift(&cli, &cfg, a),
        Command::Spectral(a) => cmd_spectral(&cli, &cfg, a),
        Command::Reproduce(a) => cmd_reproduce(&cli, &cfg, a),
    }
}

fn cmd_prepare(cli: &Cli, cfg: &ConfigFile, a: &PrepareArgs) -> Result<()> {
    let out = out_dir(&cli.out_dir, cfg, "data")?;
    let seed = cfg.resolve(cli.seed, "seed", 0)?;
    let defaults = SplitSizes::default();
    let sizes = SplitSizes {
        train: cfg.resolve(a.train_size, "train_size", defaults.train)?,
        test: cfg.resolve(a.test_size, "test_size", defaults.test)?,
        val: cfg.resolve(a.val_size, "val_size", defaults.val)?,
    };
    let mnist: Option<PathBuf> = cfg.pick(a.mnist.clone(), "mnist")?;
    let fmnist: Option<PathBuf> = cfg.pick(a.fmnist.clone(), "fmnist")?;
    let mut sources: Vec<(SourceKind, &Path)> = Vec::new();
    if let Some(p) = &mnist {
        sources.push((SourceKind::Mnist, p));
    }
    if let Some(p) = &fmnist {
        sources.push((SourceKind::Fmnist, p));
    }
    if sources.is_empty() {
        return Err(CliError::Usage("give --mnist and/or --fmnist".into()));
    }
    let summary = datasets::prepare(&sources, &out, seed, sizes)?;
    for s in &summary.sources {
        let rows: Vec<String> = s.splits.iter().map(|p| format!("{}={}", p.split, p.rows)).collect();
        say!("{}: {} (mean {:.6}, std {:.6})", s.source, rows.join(" "), s.norm.mean, s.norm.std);
        if let Some(w) = &s.warning {
            say!("warning: {w}");
        }
    }
    say!("wrote {}", out.join("stats.json").display());
    Ok(())
}

/// Resolves train flags, config keys and defaults into run options.
pub fn resolve_train_options(cli: &Cli, cfg: &ConfigFile, a: &TrainArgs) -> Result<TrainOptions> {
    let mode_s: Option<String> = cfg.pick(a.mode.clone(), "mode")?;
    let mode = TrainMode::parse(&mode_s.ok_or_else(|| CliError::Usage("--mode is required".into()))?)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let group_s: Option<String> = cfg.pick(a.group.clone(), "group")?;
    let group = parse_group(&group_s.ok_or_else(|| CliError::Usage("--group is required".into()))?)?;
    let seed = cfg.resolve(cli.seed, "seed", 0)?;
    let data_dir = cfg.resolve(a.data_dir.clone(), "data_dir", PathBuf::from("data"))?;
    let mut o = TrainOptions::new(mode, group, seed, data_dir);

    let form: Option<String> = cfg.pick(a.reg_form.clone(), "reg_form")?;
    if let Some(f) = form {
        if mode != TrainMode::IR {
            return Err(CliError::Usage(format!("--reg-form only applies to IR mode, not {}", mode.name())));
        }
        o = o.with_form(RegForm::parse(&f).map_err(|e| CliError::Usage(e.to_string()))?);
    }
    let nu: Option<String> = cfg.pick(a.nu.clone(), "nu")?;
    if let Some(n) = nu {
        if mode != TrainMode::IR {
            return Err(CliError::Usage(format!("--nu only applies to IR mode, not {}", mode.name())));
        }
        o.nu = usage(n.parse::<NuSetting>())?;
    }
    o.epochs = cfg.resolve(a.epochs, "epochs", o.epochs)?;
    o.batch_size = cfg.resolve(a.batch_size, "batch_size", o.batch_size)?;
    o.lr = cfg.resolve(a.lr, "lr", o.lr)?;
    if let Some(d) = cfg.pick(a.dataset.clone(), "dataset")? {
        o.dataset = parse_source(&d)?;
    }
    o.train_limit = cfg.pick(a.train_limit, "train_limit")?;
    o.val_limit = cfg.pick(a.val_limit, "val_limit")?;
    o.tune_epochs = cfg.resolve(a.tune_epochs, "tune_epochs", o.tune_epochs)?;
    o.si_target = cfg.resolve(a.si_target, "si_target", o.si_target)?;
    o.run_id = cfg.resolve(a.run_id.clone(), "run_id", o.default_run_id())?;
    o.validate()?;
    Ok(o)
}

fn cmd_train(cli: &Cli, cfg: &ConfigFile, a: &TrainArgs) -> Result<()> {
    let out = out_dir(&cli.out_dir, cfg, "runs")?;
    let opts = match &a.from_manifest {
        Some(p) => RunManifest::load(p)?.options,
        None => resolve_train_options(cli, cfg, a)?,
    };
    let m = runs::train_run(&opts, &out, a.overwrite)?;
    let dir = runs::run_dir(&out, &m.run_id);
    let best = m.best_epoch;
    say!("run {} finished (best epoch {best}, nu {})", m.run_id, m.config.nu);
    say!("wrote {}", dir.display());
    Ok(())
}

fn data_choice(cfg: &ConfigFile, group: &Option<String>, data_dir: &Option<PathBuf>, limit: Option<usize>) -> Result<DataChoice> {
    let group: Option<String> = cfg.pick(group.clone(), "group")?;
    Ok(DataChoice {
        data_dir: cfg.pick(data_dir.clone(), "data_dir")?,
        group: group.map(|g| parse_group(&g)).transpose()?,
        dataset: None,
        limit: cfg.pick(limit, "limit")?,
    })
}

fn cmd_eval(cli: &Cli, cfg: &ConfigFile, a: &EvalArgs) -> Result<()> {
    let out = out_dir(&cli.out_dir, cfg, "results")?;
    std::fs::create_dir_all(&out).map_err(crate::error::io_at(&out))?;
    let run = LoadedRun::load(&a.checkpoint)?;
    let mut choice = data_choice(cfg, &a.group, &a.data_dir, a.limit)?;
    if let Some(d) = cfg.pick(a.dataset.clone(), "dataset")? {
        choice.dataset = Some(parse_source(&d)?);
    }
    let split = parse_split(&cfg.resolve(a.split.clone(), "split", "test".to_string())?)?;
    let opts = EvalOptions {
        ig_steps: cfg.resolve(a.ig_steps, "ig_steps", DEFAULT_IG_STEPS)?,
        si_samples: Some(cfg.resolve(a.si_samples, "si_samples", 1000)?),
    };
    let (report, row) = audit::eval_run(&run, &choice, split, opts)?;
    let stem = format!("eval-{}-{}-{}", run.run_id, row.group, split.name());
    crate::write_json(&out.join(format!("{stem}.json")), &report)?;
    crate::write_csv(&out.join(format!("{stem}.csv")), [&row])?;
    say!(
        "{}: accuracy {:.4} di {:.6e} li {:.6e} si {:.6}",
        run.run_id, row.accuracy, row.di, row.li, row.si
    );
    say!("wrote {}", out.join(format!("{stem}.csv")).display());
    Ok(())
}

fn cmd_drift(cli: &Cli, cfg: &ConfigFile, a: &DriftArgs) -> Result<()> {
    let out = out_dir(&cli.out_dir, cfg, "results")?;
    std::fs::create_dir_all(&out).map_err(crate::error::io_at(&out))?;
    let run = LoadedRun::load(&a.checkpoint)?;
    let choice = data_choice(cfg, &a.group, &a.data_dir, a.limit)?;
    let betas = match cfg.pick(a.betas.clone(), "betas")? {
        Some(s) => parse_list::<f64>(&s, "beta")?,
        None => audit::DEFAULT_BETAS.to_vec(),
    };
    let pairing_seed = cfg.resolve(a.pairing_seed, "pairing_seed", 0)?;
    let rows = audit::drift_run(&run, &choice, &betas, pairing_seed)?;
    let path = out.join(format!("drift-{}.csv", run.run_id));
    crate::write_csv(&path, &rows)?;
    for r in &rows {
        say!("beta {:.2}: di {:.6e} accuracy {:.4} ratio {:.4}", r.beta, r.di, r.accuracy, r.acc_ratio);
    }
    say!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct PropositionRow {
    seed: u64,
    trials: usize,
    pass_a: usize,
    pass_b: usize,
    pass_c: usize,
    max_sigma_increase: f64,
    max_expm_norm_error: f64,
    max_simulation_error: f64,
}

fn cmd_spectral(cli: &Cli, cfg: &ConfigFile, a: &SpectralArgs) -> Result<()> {
    let out = out_dir(&cli.out_dir, cfg, "results")?;
    std::fs::create_dir_all(&out).map_err(crate::error::io_at(&out))?;
    if a.prop1 {
        let seed = cfg.resolve(cli.seed, "seed", 0)?;
        let trials = cfg.resolve(a.trials, "trials", 100)?;
        let r = verify_proposition1(trials, seed)?;
        let row = PropositionRow {
            seed,
            trials: r.trials,
            pass_a: r.pass_a,
            pass_b: r.pass_b,
            pass_c: r.pass_c,
            max_sigma_increase: r.max_sigma_increase,
            max_expm_norm_error: r.max_expm_norm_error,
            max_simulation_error: r.max_simulation_error,
        };
        crate::write_csv(&out.join("prop1.csv"), [&row])?;
        crate::write_json(&out.join("prop1.json"), &r)?;
        say!("(a) {}/{}  (b) {}/{}  (c) {}/{}", r.pass_a, trials, r.pass_b, trials, r.pass_c, trials);
        say!("wrote {}", out.join("prop1.csv").display());
        return Ok(());
    }
    if a.checkpoint.is_empty() {
        return Err(CliError::Usage("give --checkpoint paths or --prop1".into()));
    }
    let choice = data_choice(cfg, &a.group, &a.data_dir, a.limit)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for path in &a.checkpoint {
        let run = LoadedRun::load(path)?;
        let (report, row) = audit::spectral_run(&run, &choice)?;
        say!("{}: sigma mean {:.6} max {:.6} over {}", row.run_id, row.sigma_mean, row.sigma_max, row.samples);
        reports.push((row.run_id.clone(), report));
        rows.push(row);
    }
    crate::write_csv(&out.join("spectral.csv"), &rows)?;
    crate::write_json(&out.join("spectral.json"), &reports)?;
    say!("wrote {}", out.join("spectral.csv").display());
    Ok(())
}

fn cmd_reproduce(cli: &Cli, cfg: &ConfigFile, a: &ReproduceArgs) -> Result<()> {
    let artifact: Artifact = usage(a.artifact.parse())?;
    let out = out_dir(&cli.out_dir, cfg, "results")?;
    let data_dir = cfg.resolve(a.data_dir.clone(), "data_dir", PathBuf::from("data"))?;
    let mut opts = ReproduceOptions::new(artifact, data_dir, out);
    if let Some(s) = cfg.pick(a.seeds.clone(), "seeds")? {
        opts.seeds = parse_list(&s, "seed")?;
    }
    if let Some(s) = cfg.pick(a.groups.clone(), "groups")? {
        opts.groups = s.split(',').map(|g| parse_group(g.trim())).collect::<Result<_>>()?;
    }
    if let Some(s) = cfg.pick(a.betas.clone(), "betas")? {
        opts.betas = parse_list(&s, "beta")?;
    }
    opts.epochs = cfg.pick(a.epochs, "epochs")?;
    opts.train_limit = cfg.pick(a.train_limit, "train_limit")?;
    opts.test_limit = cfg.pick(a.test_limit, "test_limit")?;
    if let Some(n) = cfg.pick(a.si_samples, "si_samples")? {
        opts.eval.si_samples = Some(n);
    }
    if let Some(n) = cfg.pick(a.nu.clone(), "nu")? {
        opts.nu = Some(usage(n.parse::<NuSetting>())?);
    }
    let done = reproduce::reproduce(&opts)?;
    if done.failures > 0 {
        say!("warning: {} cells failed; see the log", done.failures);
    }
    say!("wrote {}", done.runs_csv.display());
    say!("wrote {}", done.summary_csv.display());
    Ok(())
}
