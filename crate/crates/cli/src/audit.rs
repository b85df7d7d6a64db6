//! Evaluation of trained runs: invariance metrics, drift and input sensitivity.

use std::path::{Path, PathBuf};

use ginv_core::data::{blend_datasets, DriftConfig, SourceKind, Split};
use ginv_core::groups::GroupKind;
use ginv_core::metrics::{self, EvalOptions, InvarianceReport};
use ginv_core::spectral::{spectral_report, SpectralReport};
use serde::{Deserialize, Serialize};

use crate::datasets::{image_group, load_split, load_transformed, transform_seed};
use crate::error::{CliError, Result};
use crate::runs::LoadedRun;

pub const DEFAULT_BETAS: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
pub const DEFAULT_SPECTRAL_SAMPLES: usize = 512;

/// Where evaluation data comes from, with run metadata as the fallback.
#[derive(Debug, Clone, Default)]
pub struct DataChoice {
    pub data_dir: Option<PathBuf>,
    pub group: Option<GroupKind>,
    pub dataset: Option<SourceKind>,
    pub limit: Option<usize>,
}

impl DataChoice {
    fn data_dir(&self, run: &LoadedRun) -> Result<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| run.data_dir().map(Path::to_path_buf))
            .ok_or_else(|| CliError::Usage("no data directory given and no run manifest to infer it from".into()))
    }

    fn group(&self, run: &LoadedRun) -> Result<GroupKind> {
        self.group
            .or_else(|| run.group())
            .ok_or_else(|| CliError::Usage("no group given and none recorded for this checkpoint".into()))
    }

    fn dataset(&self, run: &LoadedRun) -> SourceKind {
        self.dataset.or_else(|| run.dataset()).unwrap_or(SourceKind::Mnist)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub run_id: String,
    pub seed: Option<u64>,
    pub group: String,
    pub mode: String,
    pub split: String,
    pub accuracy: f64,
    pub di: f64,
    pub li: f64,
    pub si: f64,
}

pub fn eval_run(run: &LoadedRun, choice: &DataChoice, split: Split, opts: EvalOptions) -> Result<(InvarianceReport, EvalRow)> {
    let kind = choice.group(run)?;
    let group = image_group(kind);
    let (data, _) = load_transformed(&choice.data_dir(run)?, choice.dataset(run), split, &group, choice.limit)?;
    let report = metrics::evaluate(&run.net, &data, &group, opts)?;
    let row = EvalRow {
        run_id: run.run_id.clone(),
        seed: run.seed(),
        group: kind.short_name().into(),
        mode: run.mode_name(),
        split: split.name().into(),
        accuracy: report.accuracy,
        di: report.di,
        li: report.li,
        si: report.si,
    };
    Ok((report, row))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub run_id: String,
    pub seed: Option<u64>,
    pub group: String,
    pub beta: f64,
    pub di: f64,
    pub accuracy: f64,
    pub acc_ratio: f64,
}

/// DI, accuracy and accuracy-drop ratio on test images blended with the other
/// dataset's label-matched test images. Each blended image receives the same
/// group element as its unblended source.
pub fn drift_run(run: &LoadedRun, choice: &DataChoice, betas: &[f64], pairing_seed: u64) -> Result<Vec<DriftRow>> {
    if let Some(b) = betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(CliError::Usage(format!("beta {b} outside [0, 1]")));
    }
    let kind = choice.group(run)?;
    let group = image_group(kind);
    let dir = choice.data_dir(run)?;
    let source = choice.dataset(run);
    let other = match source {
        SourceKind::Mnist => SourceKind::Fmnist,
        SourceKind::Fmnist => SourceKind::Mnist,
    };
    let (d1, header) = load_split(&dir, source, Split::Test)?;
    let d1 = match choice.limit {
        Some(n) if n < d1.len() => d1.head(n),
        _ => d1,
    };
    let (d2, _) = load_split(&dir, other, Split::Test)?;
    let tseed = transform_seed(header.seed, Split::Test, kind);
    let base = d1.transformed(&group, tseed)?;
    let base_acc = metrics::accuracy(&run.net, &base)?;
    if base_acc == 0.0 {
        return Err(ginv_core::Error::DegenerateAccuracy.into());
    }
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let drifted = blend_datasets(&d1, &d2, DriftConfig::new(beta, pairing_seed)?)?.transformed(&group, tseed)?;
        let accuracy = metrics::accuracy(&run.net, &drifted)?;
        rows.push(DriftRow {
            run_id: run.run_id.clone(),
            seed: run.seed(),
            group: kind.short_name().into(),
            beta,
            di: metrics::di(&run.net, &drifted, &group)?,
            accuracy,
            acc_ratio: accuracy / base_acc,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralRow {
    pub run_id: String,
    pub seed: Option<u64>,
    pub mode: String,
    pub group: String,
    pub reg_form: String,
    pub samples: usize,
    pub sigma_mean: f64,
    pub sigma_max: f64,
    pub unconverged: usize,
}

/// `σ_max(J)` statistics over the leading group-transformed test samples.
pub fn spectral_run(run: &LoadedRun, choice: &DataChoice) -> Result<(SpectralReport, SpectralRow)> {
    let kind = choice.group(run)?;
    let group = image_group(kind);
    let limit = choice.limit.unwrap_or(DEFAULT_SPECTRAL_SAMPLES);
    let (data, _) = load_transformed(&choice.data_dir(run)?, choice.dataset(run), Split::Test, &group, Some(limit))?;
    let report = spectral_report(&run.net, &data, None)?;
    let row = SpectralRow {
        run_id: run.run_id.clone(),
        seed: run.seed(),
        mode: run.mode_name(),
        group: kind.short_name().into(),
        reg_form: run.reg_form_name(),
        samples: report.per_sample.len(),
        sigma_mean: report.mean,
        sigma_max: report.max,
        unconverged: report.unconverged,
    };
    Ok((report, row))
}
