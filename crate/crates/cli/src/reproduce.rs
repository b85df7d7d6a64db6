//! Experiment grids: per-run rows plus mean and sample standard deviation per cell.

use std::path::PathBuf;

use ginv_core::data::Split;
use ginv_core::groups::GroupKind;
use ginv_core::metrics::EvalOptions;
use ginv_core::regularizers::{RegForm, TrainMode};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::audit::{drift_run, eval_run, spectral_run, DataChoice, DriftRow, EvalRow, SpectralRow};
use crate::error::{CliError, Result};
use crate::runs::{train_or_reuse, LoadedRun, NuSetting, TrainOptions};

pub const DEFAULT_SEEDS: [u64; 4] = [0, 1, 2, 3];
pub const GROUPS: [GroupKind; 2] = [GroupKind::Rot4, GroupKind::TransX3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Artifact {
    Table1,
    Fig4,
    Fig5,
}

impl std::str::FromStr for Artifact {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "table1" => Ok(Artifact::Table1),
            "fig4" => Ok(Artifact::Fig4),
            "fig5" => Ok(Artifact::Fig5),
            _ => Err(format!("unknown artifact {s:?} (expected table1, fig4 or fig5)")),
        }
    }
}

/// One training recipe in a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub mode: TrainMode,
    pub form: RegForm,
}

impl Variant {
    pub const DA: Variant = Variant {
        mode: TrainMode::DA,
        form: RegForm::L2,
    };
    pub const WT: Variant = Variant {
        mode: TrainMode::WT,
        form: RegForm::L2,
    };

    pub fn ir(form: RegForm) -> Self {
        Variant {
            mode: TrainMode::IR,
            form,
        }
    }

    pub fn label(self) -> String {
        match self.mode {
            TrainMode::IR => format!("IR-{}", self.form.name().to_ascii_uppercase()),
            m => m.name().to_string(),
        }
    }
}

/// Variants of each artifact, in output order.
pub fn variants(artifact: Artifact) -> Vec<Variant> {
    match artifact {
        Artifact::Table1 | Artifact::Fig4 => vec![Variant::DA, Variant::WT, Variant::ir(RegForm::L2)],
        Artifact::Fig5 => vec![
            Variant::DA,
            Variant::ir(RegForm::Kl),
            Variant::ir(RegForm::L2),
            Variant::ir(RegForm::L2Normalized),
        ],
    }
}

#[derive(Debug, Clone)]
pub struct ReproduceOptions {
    pub artifact: Artifact,
    pub seeds: Vec<u64>,
    pub groups: Vec<GroupKind>,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub epochs: Option<usize>,
    pub train_limit: Option<usize>,
    /// Weight for every IR run; overridden per cell by `nu_overrides`.
    pub nu: Option<NuSetting>,
    pub nu_overrides: Vec<(GroupKind, RegForm, NuSetting)>,
    pub eval: EvalOptions,
    pub test_limit: Option<usize>,
    pub betas: Vec<f64>,
    pub pairing_seed: u64,
    pub spectral_samples: usize,
}

impl ReproduceOptions {
    pub fn new(artifact: Artifact, data_dir: PathBuf, out_dir: PathBuf) -> Self {
        ReproduceOptions {
            artifact,
            seeds: DEFAULT_SEEDS.to_vec(),
            groups: GROUPS.to_vec(),
            data_dir,
            out_dir,
            epochs: None,
            train_limit: None,
            nu: None,
            nu_overrides: Vec::new(),
            eval: EvalOptions::default(),
            test_limit: None,
            betas: crate::audit::DEFAULT_BETAS.to_vec(),
            pairing_seed: 0,
            spectral_samples: crate::audit::DEFAULT_SPECTRAL_SAMPLES,
        }
    }

    pub fn train_options(&self, group: GroupKind, variant: Variant, seed: u64) -> TrainOptions {
        let mut o = TrainOptions::new(variant.mode, group, seed, self.data_dir.clone()).with_form(variant.form);
        if let Some(e) = self.epochs {
            o.epochs = e;
        }
        o.train_limit = self.train_limit;
        if variant.mode == TrainMode::IR {
            let cell = self
                .nu_overrides
                .iter()
                .find(|(g, f, _)| *g == group && *f == variant.form)
                .map(|(_, _, nu)| *nu);
            if let Some(nu) = cell.or(self.nu) {
                o.nu = nu;
            }
        }
        o
    }

    fn runs_dir(&self) -> PathBuf {
        self.out_dir.join("runs")
    }

    fn choice(&self, group: GroupKind, limit: Option<usize>) -> DataChoice {
        DataChoice {
            data_dir: Some(self.data_dir.clone()),
            group: Some(group),
            dataset: None,
            limit,
        }
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub group: String,
    pub mode: String,
    pub runs: usize,
    pub failed: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub li_mean: f64,
    pub li_std: f64,
    pub di_mean: f64,
    pub di_std: f64,
    pub si_mean: f64,
    pub si_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4Row {
    pub group: String,
    pub mode: String,
    pub beta: f64,
    pub runs: usize,
    pub di_mean: f64,
    pub di_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub acc_ratio_mean: f64,
    pub acc_ratio_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig5Row {
    pub group: String,
    pub variant: String,
    pub runs: usize,
    pub failed: usize,
    pub sigma_mean: f64,
    pub sigma_std: f64,
}

/// Outcome of one (group, variant, seed) cell.
#[derive(Debug, Clone)]
pub struct Cell<T> {
    pub group: GroupKind,
    pub variant: Variant,
    pub seed: u64,
    pub result: std::result::Result<T, String>,
}

fn cells_for<T>(cells: &[Cell<T>], group: GroupKind, variant: Variant) -> impl Iterator<Item = &Cell<T>> {
    cells
        .iter()
        .filter(move |c| c.group == group && c.variant == variant)
}

pub fn aggregate_table1(cells: &[Cell<EvalRow>], groups: &[GroupKind], order: &[Variant]) -> Vec<Table1Row> {
    let mut rows = Vec::new();
    for &g in groups {
        for &v in order {
            let ok: Vec<&EvalRow> = cells_for(cells, g, v).filter_map(|c| c.result.as_ref().ok()).collect();
            let failed = cells_for(cells, g, v).filter(|c| c.result.is_err()).count();
            let stat = |f: fn(&EvalRow) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (accuracy_mean, accuracy_std) = stat(|r| r.accuracy);
            let (li_mean, li_std) = stat(|r| r.li);
            let (di_mean, di_std) = stat(|r| r.di);
            let (si_mean, si_std) = stat(|r| r.si);
            rows.push(Table1Row {
                group: g.short_name().into(),
                mode: v.label(),
                runs: ok.len(),
                failed,
                accuracy_mean,
                accuracy_std,
                li_mean,
                li_std,
                di_mean,
                di_std,
                si_mean,
                si_std,
            });
        }
    }
    rows
}

pub fn aggregate_fig4(cells: &[Cell<Vec<DriftRow>>], groups: &[GroupKind], order: &[Variant], betas: &[f64]) -> Vec<Fig4Row> {
    let mut rows = Vec::new();
    for &g in groups {
        for &v in order {
            for &beta in betas {
                let at_beta: Vec<&DriftRow> = cells_for(cells, g, v)
                    .filter_map(|c| c.result.as_ref().ok())
                    .filter_map(|rs| rs.iter().find(|r| r.beta == beta))
                    .collect();
                let stat = |f: fn(&DriftRow) -> f64| mean_std(&at_beta.iter().map(|r| f(r)).collect::<Vec<_>>());
                let (di_mean, di_std) = stat(|r| r.di);
                let (accuracy_mean, accuracy_std) = stat(|r| r.accuracy);
                let (acc_ratio_mean, acc_ratio_std) = stat(|r| r.acc_ratio);
                rows.push(Fig4Row {
                    group: g.short_name().into(),
                    mode: v.label(),
                    beta,
                    runs: at_beta.len(),
                    di_mean,
                    di_std,
                    accuracy_mean,
                    accuracy_std,
                    acc_ratio_mean,
                    acc_ratio_std,
                });
            }
        }
    }
    rows
}

pub fn aggregate_fig5(cells: &[Cell<SpectralRow>], groups: &[GroupKind], order: &[Variant]) -> Vec<Fig5Row> {
    let mut rows = Vec::new();
    for &g in groups {
        for &v in order {
            let ok: Vec<f64> = cells_for(cells, g, v)
                .filter_map(|c| c.result.as_ref().ok())
                .map(|r| r.sigma_mean)
                .collect();
            let failed = cells_for(cells, g, v).filter(|c| c.result.is_err()).count();
            let (sigma_mean, sigma_std) = mean_std(&ok);
            rows.push(Fig5Row {
                group: g.short_name().into(),
                variant: v.label(),
                runs: ok.len(),
                failed,
                sigma_mean,
                sigma_std,
            });
        }
    }
    rows
}

fn run_cell<T>(
    opts: &ReproduceOptions,
    group: GroupKind,
    variant: Variant,
    seed: u64,
    measure: impl FnOnce(&LoadedRun) -> Result<T>,
) -> Cell<T> {
    let train = opts.train_options(group, variant, seed);
    let result = train_or_reuse(&train, &opts.runs_dir())
        .and_then(|m| LoadedRun::load(&opts.runs_dir().join(&m.run_id)))
        .and_then(|run| measure(&run))
        .map_err(|e| {
            warn!("{} {} seed {seed} failed: {e}", group.short_name(), variant.label());
            e.to_string()
        });
    Cell {
        group,
        variant,
        seed,
        result,
    }
}

/// Paths of the files written by [`reproduce`].
#[derive(Debug, Clone)]
pub struct ReproduceOutput {
    pub runs_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub failures: usize,
}

/// Trains (or reuses) every cell of the artifact's grid, then writes the
/// per-run CSV and the aggregated CSV. Failed cells are counted, not fatal.
pub fn reproduce(opts: &ReproduceOptions) -> Result<ReproduceOutput> {
    if opts.seeds.is_empty() || opts.groups.is_empty() {
        return Err(CliError::Usage("at least one seed and one group required".into()));
    }
    std::fs::create_dir_all(&opts.out_dir).map_err(crate::error::io_at(&opts.out_dir))?;
    let order = variants(opts.artifact);
    let mut grid = Vec::new();
    for &g in &opts.groups {
        for &v in &order {
            for &s in &opts.seeds {
                grid.push((g, v, s));
            }
        }
    }
    let name = match opts.artifact {
        Artifact::Table1 => "table1",
        Artifact::Fig4 => "fig4",
        Artifact::Fig5 => "fig5",
    };
    let runs_csv = opts.out_dir.join(format!("{name}_runs.csv"));
    let summary_csv = opts.out_dir.join(format!("{name}.csv"));
    let failures;
    match opts.artifact {
        Artifact::Table1 => {
            let cells: Vec<_> = grid
                .iter()
                .map(|&(g, v, s)| {
                    info!("table1 cell {} {} seed {s}", g.short_name(), v.label());
                    run_cell(opts, g, v, s, |run| {
                        Ok(eval_run(run, &opts.choice(g, opts.test_limit), Split::Test, opts.eval)?.1)
                    })
                })
                .collect();
            failures = cells.iter().filter(|c| c.result.is_err()).count();
            crate::write_csv(&runs_csv, cells.iter().filter_map(|c| c.result.as_ref().ok()))?;
            crate::write_csv(&summary_csv, aggregate_table1(&cells, &opts.groups, &order).iter())?;
        }
        Artifact::Fig4 => {
            let cells: Vec<_> = grid
                .iter()
                .map(|&(g, v, s)| {
                    info!("fig4 cell {} {} seed {s}", g.short_name(), v.label());
                    run_cell(opts, g, v, s, |run| {
                        drift_run(run, &opts.choice(g, opts.test_limit), &opts.betas, opts.pairing_seed)
                    })
                })
                .collect();
            failures = cells.iter().filter(|c| c.result.is_err()).count();
            crate::write_csv(&runs_csv, cells.iter().filter_map(|c| c.result.as_ref().ok()).flatten())?;
            crate::write_csv(&summary_csv, aggregate_fig4(&cells, &opts.groups, &order, &opts.betas).iter())?;
        }
        Artifact::Fig5 => {
            let cells: Vec<_> = grid
                .iter()
                .map(|&(g, v, s)| {
                    info!("fig5 cell {} {} seed {s}", g.short_name(), v.label());
                    run_cell(opts, g, v, s, |run| {
                        Ok(spectral_run(run, &opts.choice(g, Some(opts.spectral_samples)))?.1)
                    })
                })
                .collect();
            failures = cells.iter().filter(|c| c.result.is_err()).count();
            crate::write_csv(&runs_csv, cells.iter().filter_map(|c| c.result.as_ref().ok()))?;
            crate::write_csv(&summary_csv, aggregate_fig5(&cells, &opts.groups, &order).iter())?;
        }
    }
    Ok(ReproduceOutput {
        runs_csv,
        summary_csv,
        failures,
    })
}
