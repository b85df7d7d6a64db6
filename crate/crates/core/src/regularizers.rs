//! Invariance-regularized training: cross-entropy plus a weighted invariance
//! error between `f(x)` and `f(gx)`, with augmentation for every mode.

use std::io::Write;

use log::{info, warn};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{act_rows, augment_rows, Dataset};
use crate::error::{Error, Result};
use crate::groups::{FiniteGroup, GroupElement};
use crate::metrics::{self, EvalOptions};
use crate::network::{
    adam_step, cross_entropy_batch, log_softmax, softmax, AdamConfig, AdamState, FirstLayerMode,
    Gradients, Mlp,
};

/// Lower clamp of the normalizing denominator `‖f(x)‖²`.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    /// Data augmentation only.
    DA,
    /// Augmentation plus the invariance regularizer.
    IR,
    /// Group-tied first layer.
    WT,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::DA => "DA",
            TrainMode::IR => "IR",
            TrainMode::WT => "WT",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DA" => Ok(TrainMode::DA),
            "IR" => Ok(TrainMode::IR),
            "WT" => Ok(TrainMode::WT),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegForm {
    /// `KL(softmax f(x) ‖ softmax f(gx))`.
    Kl,
    /// `½‖f(x) − f(gx)‖²`.
    L2,
    /// `‖f(x) − f(gx)‖² / ‖f(x)‖²`.
    L2Normalized,
}

impl RegForm {
    pub const ALL: [RegForm; 3] = [RegForm::Kl, RegForm::L2, RegForm::L2Normalized];

    pub fn name(self) -> &'static str {
        match self {
            RegForm::Kl => "kl",
            RegForm::L2 => "l2",
            RegForm::L2Normalized => "l2n",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(RegForm::Kl),
            "l2" => Ok(RegForm::L2),
            "l2n" | "l2normalized" | "l2_normalized" => Ok(RegForm::L2Normalized),
            _ => Err(Error::Config(format!("unknown regularizer form {s:?}"))),
        }
    }

    /// Value and gradients with respect to the logits of `x` (`a`) and of `gx` (`b`).
    pub fn eval(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
        match self {
            RegForm::Kl => {
                let lp = log_softmax(a);
                let lq = log_softmax(b);
                let p = softmax(a);
                let q = softmax(b);
                let diff = &lp - &lq;
                let kl = p.dot(&diff);
                let ga = &p * &(&diff - kl);
                let gb = &q - &p;
                (kl.max(0.0), ga, gb)
            }
            RegForm::L2 => {
                let d = &a - &b;
                (0.5 * d.dot(&d), d.clone(), -d)
            }
            RegForm::L2Normalized => {
                let d = &a - &b;
                let n = d.dot(&d);
                let a2 = a.dot(&a);
                let den = a2.max(NORM_FLOOR);
                let mut ga = &d * (2.0 / den);
                if a2 > NORM_FLOOR {
                    ga = ga - &a * (2.0 * n / (den * den));
                }
                (n / den, ga, &d * (-2.0 / den))
            }
        }
    }

    /// Batch mean and per-row gradients (already divided by the batch size).
    pub fn eval_batch(self, a: ArrayView2<f64>, b: ArrayView2<f64>) -> (f64, Array2<f64>, Array2<f64>) {
        let n = a.nrows();
        let mut ga = Array2::zeros(a.dim());
        let mut gb = Array2::zeros(b.dim());
        let mut total = 0.0;
        for i in 0..n {
            let (v, da, db) = self.eval(a.row(i), b.row(i));
            total += v;
            ga.row_mut(i).assign(&(da / n as f64));
            gb.row_mut(i).assign(&(db / n as f64));
        }
        (total / n.max(1) as f64, ga, gb)
    }
}

/// A regularizer value with its parameter gradient.
#[derive(Debug, Clone)]
pub struct RegTerm {
    pub value: f64,
    pub grads: Gradients,
}

/// Regularizer for a single image and group element, differentiated through
/// both `f(x)` and `f(gx)`.
pub fn reg_term(net: &Mlp, x: ArrayView2<f64>, g: &GroupElement, form: RegForm) -> Result<RegTerm> {
    let gx = g.act(x)?;
    let xf: Array1<f64> = x.iter().copied().collect();
    let gxf: Array1<f64> = gx.iter().copied().collect();
    let (a, ca) = net.forward(xf.view())?;
    let (b, cb) = net.forward(gxf.view())?;
    let (value, da, db) = form.eval(a.view(), b.view());
    let mut grads = net.backward(&ca, da.insert_axis(Axis(0)).view())?;
    grads.add_scaled(&net.backward(&cb, db.insert_axis(Axis(0)).view())?, 1.0);
    Ok(RegTerm { value, grads })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub group: FiniteGroup,
    pub reg_form: RegForm,
    pub nu: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub si_target: f64,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, group: FiniteGroup) -> Self {
        TrainConfig {
            mode,
            group,
            reg_form: RegForm::L2,
            nu: 0.0,
            epochs: 300,
            batch_size: 512,
            lr: 0.0008,
            seed: 0,
            si_target: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.nu.is_finite() || self.nu < 0.0 {
            return Err(Error::Config(format!("nu must be finite and >= 0, got {}", self.nu)));
        }
        if self.mode != TrainMode::IR && self.nu != 0.0 {
            return Err(Error::Config(format!("nu must be 0 in {} mode", self.mode.name())));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    fn check_net(&self, net: &Mlp) -> Result<()> {
        match (self.mode, net.first_layer_mode()) {
            (TrainMode::WT, FirstLayerMode::GroupTied(g)) if g == self.group => Ok(()),
            (TrainMode::WT, _) => Err(Error::Config(
                "WT mode needs a network tied to the training group".into(),
            )),
            (_, FirstLayerMode::Plain) => Ok(()),
            (m, _) => Err(Error::Config(format!("{} mode needs a plain network", m.name()))),
        }
    }
}

/// Loss components of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub ce: f64,
    pub reg: f64,
    pub total: f64,
}

/// Loss and gradient of `mean CE + nu * mean reg` on one (already augmented) batch.
/// `reg_elements[i]` is the group element paired with row `i`; it is ignored when `nu == 0`.
pub fn batch_objective(
    net: &Mlp,
    x: ArrayView2<f64>,
    labels: &[u8],
    reg_elements: &[usize],
    cfg: &TrainConfig,
) -> Result<(BatchLoss, Gradients)> {
    let cache = net.forward_batch(x)?;
    let (ce, mut dlogits) = cross_entropy_batch(cache.logits(), labels);
    if cfg.nu == 0.0 {
        let grads = net.backward(&cache, dlogits.view())?;
        return Ok((BatchLoss { ce, reg: 0.0, total: ce }, grads));
    }
    if reg_elements.len() != x.nrows() {
        return Err(Error::Shape("one regularizer element per row required".into()));
    }
    let gx = act_rows(x, &cfg.group.permutations(), reg_elements);
    let gcache = net.forward_batch(gx.view())?;
    let (reg, da, db) = cfg.reg_form.eval_batch(cache.logits(), gcache.logits());
    dlogits.scaled_add(cfg.nu, &da);
    let mut grads = net.backward(&cache, dlogits.view())?;
    grads.add_scaled(&net.backward(&gcache, db.view())?, cfg.nu);
    Ok((
        BatchLoss {
            ce,
            reg,
            total: ce + cfg.nu * reg,
        },
        grads,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_li: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_acc,val_li,nu";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.epochs {
            writeln!(w, "{},{},{},{},{}", r.epoch, r.train_loss, r.val_acc, r.val_li, r.nu)?;
        }
        Ok(())
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Trains `net` and returns the parameters of the best validation-accuracy epoch.
///
/// Batch order and augmentation draw from one ChaCha8 stream; regularizer
/// elements draw from a second, so `nu = 0` leaves the trajectory unchanged.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, val: &Dataset, mut net: Mlp) -> Result<(Mlp, History)> {
    cfg.validate()?;
    cfg.check_net(&net)?;
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let perms = cfg.group.permutations();
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reg_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    reg_rng.set_stream(1);
    let mut adam = AdamState::new(
        &net,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, Mlp)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut data_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.select(chunk);
            let mut x = batch.pixels().to_owned();
            augment_rows(&mut x, &perms, &mut data_rng);
            let ks: Vec<usize> = if cfg.nu > 0.0 {
                (0..x.nrows()).map(|_| reg_rng.random_range(0..perms.len())).collect()
            } else {
                Vec::new()
            };
            let (loss, grads) = batch_objective(&net, x.view(), batch.labels(), &ks, cfg)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: loss.total,
                });
            }
            adam_step(&mut net, &grads, &mut adam)?;
            loss_sum += loss.total;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let (val_acc, val_li) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (metrics::accuracy(&net, val)?, metrics::li(&net, val, &cfg.group)?)
        };
        info!(
            "{} {} epoch {epoch}/{}: loss {train_loss:.5} val_acc {val_acc:.4} val_li {val_li:.5}",
            cfg.mode.name(),
            cfg.group.kind().short_name(),
            cfg.epochs
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_acc,
            val_li,
            nu: cfg.nu,
        });
        let improved = match &best {
            None => true,
            Some((acc, _)) => val_acc > *acc,
        };
        if improved {
            best = Some((val_acc, net.clone()));
            history.best_epoch = epoch;
        }
    }
    let net = best.map(|(_, n)| n).unwrap_or(net);
    Ok((net, history))
}

/// Validation scores of one candidate weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuTrial {
    pub nu: f64,
    pub val_acc: f64,
    pub val_li: f64,
    pub val_si: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuSelection {
    pub nu: f64,
    /// Set when no candidate reached the SI target.
    pub target_missed: bool,
    pub budget_epochs: usize,
    pub trials: Vec<NuTrial>,
}

fn check_candidates(candidates: &[f64]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Config("no nu candidates".into()));
    }
    if candidates.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config("nu candidates must be finite and >= 0".into()));
    }
    if candidates.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("nu candidates must be ascending".into()));
    }
    Ok(())
}

fn run_trial(
    cfg: &TrainConfig,
    nu: f64,
    budget_epochs: usize,
    train_set: &Dataset,
    val: &Dataset,
    init: &Mlp,
    eval: EvalOptions,
) -> Result<NuTrial> {
    let mut c = *cfg;
    c.epochs = budget_epochs;
    // The weight only enters in IR mode; other modes train unregularized.
    c.nu = if c.mode == TrainMode::IR { nu } else { 0.0 };
    let (net, _) = train(&c, train_set, val, init.clone())?;
    let r = metrics::evaluate(&net, val, &cfg.group, eval)?;
    Ok(NuTrial {
        nu,
        val_acc: r.accuracy,
        val_li: r.li,
        val_si: r.si,
    })
}

/// Trains every candidate and reports validation scores.
pub fn sweep_nu(
    cfg: &TrainConfig,
    train_set: &Dataset,
    val: &Dataset,
    init: &Mlp,
    candidates: &[f64],
    budget_epochs: usize,
    eval: EvalOptions,
) -> Result<Vec<NuTrial>> {
    check_candidates(candidates)?;
    candidates
        .iter()
        .map(|&nu| run_trial(cfg, nu, budget_epochs, train_set, val, init, eval))
        .collect()
}

/// Smallest candidate whose validation SI reaches `cfg.si_target`, trained for
/// `budget_epochs` from `init`. Falls back to the largest candidate with
/// `target_missed` set.
pub fn tune_nu(
    cfg: &TrainConfig,
    train_set: &Dataset,
    val: &Dataset,
    init: &Mlp,
    candidates: &[f64],
    budget_epochs: usize,
    eval: EvalOptions,
) -> Result<NuSelection> {
    check_candidates(candidates)?;
    let mut trials = Vec::new();
    for &nu in candidates {
        let t = run_trial(cfg, nu, budget_epochs, train_set, val, init, eval)?;
        trials.push(t);
        if t.val_si >= cfg.si_target {
            return Ok(NuSelection {
                nu,
                target_missed: false,
                budget_epochs,
                trials,
            });
        }
    }
    let nu = *candidates.last().expect("non-empty");
    warn!("no nu candidate reached SI {}; using {nu}", cfg.si_target);
    Ok(NuSelection {
        nu,
        target_missed: true,
        budget_epochs,
        trials,
    })
}
