//! Training runs: resolved options, manifests and checkpoint loading.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ginv_core::data::{NormStats, SourceKind, Split, SplitSizes};
use ginv_core::groups::GroupKind;
use ginv_core::metrics::EvalOptions;
use ginv_core::network::{FirstLayerMode, Mlp, NetSpec};
use ginv_core::regularizers::{train, tune_nu, NuSelection, RegForm, TrainConfig, TrainMode};
use log::info;
use serde::{Deserialize, Serialize};

use crate::datasets::{image_group, load_split, load_transformed, transform_seed};
use crate::error::{at, io_at, CliError, Result};

pub const CHECKPOINT_FILE: &str = "model.ginvnet";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Offset between the training seed and the weight-initialization seed.
pub const INIT_SEED_OFFSET: u64 = 0x1_0000;
pub const DEFAULT_NU_LADDER: [f64; 13] = [0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1e3, 3e3, 1e4, 3e4, 1e5];

/// Regularizer weight used for IR runs when none is given: the smallest weight
/// reaching validation SI >= 0.95 after a full 300-epoch run (mean over seeds
/// 0-3 for L2, seed 0 otherwise), or the weight with the highest SI where none
/// does (KL and normalized L2 on TransX3).
pub fn default_nu(group: GroupKind, form: RegForm) -> f64 {
    match (group, form) {
        (GroupKind::TransX3, RegForm::L2) => 20.0,
        (_, RegForm::L2) => 2.5,
        (_, RegForm::Kl) => 300.0,
        (GroupKind::TransX3, RegForm::L2Normalized) => 3e4,
        (_, RegForm::L2Normalized) => 1e5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuSetting {
    Fixed(f64),
    Auto,
}

impl std::str::FromStr for NuSetting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(NuSetting::Auto);
        }
        let v: f64 = s.parse().map_err(|_| format!("expected a number or `auto`, got {s:?}"))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(format!("nu must be finite and >= 0, got {v}"));
        }
        Ok(NuSetting::Fixed(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub run_id: String,
    pub mode: TrainMode,
    pub group: GroupKind,
    pub reg_form: RegForm,
    pub nu: NuSetting,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub dataset: SourceKind,
    pub data_dir: PathBuf,
    pub train_limit: Option<usize>,
    pub val_limit: Option<usize>,
    pub si_target: f64,
    pub tune_epochs: usize,
    pub tune_si_samples: usize,
    pub nu_ladder: Vec<f64>,
}

impl TrainOptions {
    /// Options with the published hyperparameters.
    pub fn new(mode: TrainMode, group: GroupKind, seed: u64, data_dir: PathBuf) -> Self {
        let mut o = TrainOptions {
            run_id: String::new(),
            mode,
            group,
            reg_form: RegForm::L2,
            nu: NuSetting::Fixed(0.0),
            seed,
            epochs: 300,
            batch_size: 512,
            lr: 0.0008,
            hidden: vec![128; 5],
            dataset: SourceKind::Mnist,
            data_dir,
            train_limit: None,
            val_limit: None,
            si_target: 0.95,
            tune_epochs: 30,
            tune_si_samples: 500,
            nu_ladder: DEFAULT_NU_LADDER.to_vec(),
        };
        if mode == TrainMode::IR {
            o.nu = NuSetting::Fixed(default_nu(group, o.reg_form));
        }
        o.run_id = o.default_run_id();
        o
    }

    pub fn with_form(mut self, form: RegForm) -> Self {
        self.reg_form = form;
        if self.mode == TrainMode::IR {
            self.nu = NuSetting::Fixed(default_nu(self.group, form));
        }
        self.run_id = self.default_run_id();
        self
    }

    pub fn default_run_id(&self) -> String {
        let g = self.group.short_name();
        let m = self.mode.name().to_ascii_lowercase();
        match self.mode {
            TrainMode::IR => format!("{m}-{}-{g}-s{}", self.reg_form.name(), self.seed),
            _ => format!("{m}-{g}-s{}", self.seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(CliError::Usage(format!("invalid run id {:?}", self.run_id)));
        }
        if self.group == GroupKind::Identity && self.mode == TrainMode::WT {
            return Err(CliError::Usage("WT mode needs a non-trivial group".into()));
        }
        if self.mode != TrainMode::IR && self.nu != NuSetting::Fixed(0.0) {
            return Err(CliError::Usage(format!("nu only applies to IR mode, not {}", self.mode.name())));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden.is_empty() {
            return Err(CliError::Usage("epochs, batch size and hidden layers must be non-empty".into()));
        }
        Ok(())
    }

    pub fn net_spec(&self) -> NetSpec {
        let first_layer = match self.mode {
            TrainMode::WT => FirstLayerMode::GroupTied(image_group(self.group)),
            _ => FirstLayerMode::Plain,
        };
        NetSpec {
            first_layer,
            hidden: self.hidden.clone(),
            ..NetSpec::standard(FirstLayerMode::Plain)
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(INIT_SEED_OFFSET)
    }

    fn train_config(&self, nu: f64) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            group: image_group(self.group),
            reg_form: self.reg_form,
            nu,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            si_target: self.si_target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFingerprint {
    pub data_seed: u64,
    pub sizes: SplitSizes,
    pub norm: NormStats,
    pub train_rows: usize,
    pub val_rows: usize,
    pub val_transform_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoint: String,
    pub history: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub options: TrainOptions,
    pub config: TrainConfig,
    pub init_seed: u64,
    pub data: DataFingerprint,
    pub nu_selection: Option<NuSelection>,
    pub best_epoch: usize,
    pub artifacts: Artifacts,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_at(path))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn run_dir(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join(run_id)
}

/// Trains one run into `out_dir/<run_id>`. An existing run with the same id is
/// an error unless `overwrite` is set.
pub fn train_run(opts: &TrainOptions, out_dir: &Path, overwrite: bool) -> Result<RunManifest> {
    opts.validate()?;
    let dir = run_dir(out_dir, &opts.run_id);
    if dir.join(MANIFEST_FILE).exists() && !overwrite {
        return Err(CliError::Usage(format!(
            "run {} already exists in {}; choose another run id or overwrite",
            opts.run_id,
            out_dir.display()
        )));
    }
    std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;

    let group = image_group(opts.group);
    let (train_set, header) = load_split(&opts.data_dir, opts.dataset, Split::Train)?;
    let train_set = match opts.train_limit {
        Some(n) if n < train_set.len() => train_set.head(n),
        _ => train_set,
    };
    let (val, _) = load_transformed(&opts.data_dir, opts.dataset, Split::Val, &group, opts.val_limit)?;
    let init = Mlp::init(&opts.net_spec(), opts.init_seed())?;

    let (nu, nu_selection) = match opts.nu {
        NuSetting::Fixed(v) => (v, None),
        NuSetting::Auto => {
            let cfg = opts.train_config(0.0);
            let eval = EvalOptions {
                si_samples: Some(opts.tune_si_samples),
                ..EvalOptions::default()
            };
            let sel = tune_nu(&cfg, &train_set, &val, &init, &opts.nu_ladder, opts.tune_epochs, eval)?;
            info!("selected nu {} (target missed: {})", sel.nu, sel.target_missed);
            (sel.nu, Some(sel))
        }
    };
    let config = opts.train_config(nu);
    let (net, history) = train(&config, &train_set, &val, init)?;

    let ckpt = dir.join(CHECKPOINT_FILE);
    let file = File::create(&ckpt).map_err(io_at(&ckpt))?;
    net.save(BufWriter::new(file)).map_err(at(&ckpt))?;
    let hist = dir.join(HISTORY_FILE);
    let file = File::create(&hist).map_err(io_at(&hist))?;
    history.write_csv(BufWriter::new(file)).map_err(at(&hist))?;

    let manifest = RunManifest {
        run_id: opts.run_id.clone(),
        tool_version: TOOL_VERSION.to_string(),
        options: opts.clone(),
        config,
        init_seed: opts.init_seed(),
        data: DataFingerprint {
            data_seed: header.seed,
            sizes: header.sizes,
            norm: header.norm,
            train_rows: train_set.len(),
            val_rows: val.len(),
            val_transform_seed: transform_seed(header.seed, Split::Val, opts.group),
        },
        nu_selection,
        best_epoch: history.best_epoch,
        artifacts: Artifacts {
            checkpoint: CHECKPOINT_FILE.into(),
            history: HISTORY_FILE.into(),
        },
    };
    crate::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reuses a finished run with identical options, otherwise trains it.
pub fn train_or_reuse(opts: &TrainOptions, out_dir: &Path) -> Result<RunManifest> {
    let dir = run_dir(out_dir, &opts.run_id);
    let mpath = dir.join(MANIFEST_FILE);
    if mpath.exists() && dir.join(CHECKPOINT_FILE).exists() {
        if let Ok(m) = RunManifest::load(&mpath) {
            if m.options == *opts && m.tool_version == TOOL_VERSION {
                info!("reusing finished run {}", opts.run_id);
                return Ok(m);
            }
        }
    }
    train_run(opts, out_dir, true)
}

/// A checkpoint with whatever run metadata sits next to it.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub run_id: String,
    pub net: Mlp,
    pub manifest: Option<RunManifest>,
}

impl LoadedRun {
    /// Loads `path`, which is either a run directory or a checkpoint file.
    pub fn load(path: &Path) -> Result<Self> {
        let (ckpt, dir) = if path.is_dir() {
            (path.join(CHECKPOINT_FILE), path.to_path_buf())
        } else {
            (path.to_path_buf(), path.parent().map(Path::to_path_buf).unwrap_or_default())
        };
        let file = File::open(&ckpt).map_err(io_at(&ckpt))?;
        let net = Mlp::load(BufReader::new(file)).map_err(at(&ckpt))?;
        let mpath = dir.join(MANIFEST_FILE);
        let manifest = if mpath.exists() {
            Some(RunManifest::load(&mpath)?)
        } else {
            None
        };
        let run_id = match &manifest {
            Some(m) => m.run_id.clone(),
            None => ckpt
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into()),
        };
        Ok(LoadedRun { run_id, net, manifest })
    }

    pub fn seed(&self) -> Option<u64> {
        self.manifest.as_ref().map(|m| m.options.seed)
    }

    pub fn mode_name(&self) -> String {
        match &self.manifest {
            Some(m) => m.options.mode.name().to_string(),
            None if self.net.is_group_tied() => "WT".into(),
            None => "unknown".into(),
        }
    }

    pub fn reg_form_name(&self) -> String {
        match &self.manifest {
            Some(m) if m.options.mode == TrainMode::IR => m.options.reg_form.name().into(),
            _ => String::new(),
        }
    }

    pub fn group(&self) -> Option<GroupKind> {
        self.manifest.as_ref().map(|m| m.options.group).or(match self.net.first_layer_mode() {
            FirstLayerMode::GroupTied(g) => Some(g.kind()),
            FirstLayerMode::Plain => None,
        })
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.manifest.as_ref().map(|m| m.options.data_dir.as_path())
    }

    pub fn dataset(&self) -> Option<SourceKind> {
        self.manifest.as_ref().map(|m| m.options.dataset)
    }
}
