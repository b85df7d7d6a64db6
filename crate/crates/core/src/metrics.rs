//! Invariance measures of a trained network over a dataset and a group.
//!
//! All three measures are means over (sample, group element) pairs with the
//! identity element included, so its terms contribute 0 (DI, LI) and 1 (SI).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::groups::{permute_rows, FiniteGroup, GroupKind};
use crate::network::{log_softmax, Mlp};

pub const DEFAULT_IG_STEPS: usize = 32;
/// Attributions below this fraction of the maximum are zeroed.
pub const SALIENCY_THRESHOLD: f64 = 0.9;
pub const BLUR_SIGMA: f64 = 1.0;

/// Metrics restricted to one group element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementMetrics {
    pub element: usize,
    pub di: f64,
    pub li: f64,
    pub si: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub accuracy: f64,
    pub di: f64,
    pub li: f64,
    pub si: f64,
    pub per_element: Vec<ElementMetrics>,
    pub samples: usize,
    pub si_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub values: Array2<f64>,
}

/// Logits of every sample transformed by every group element, in element order.
pub fn orbit_logits(net: &Mlp, x: ArrayView2<f64>, group: &FiniteGroup) -> Result<Vec<Array2<f64>>> {
    check_width(group, x.ncols())?;
    group
        .permutations()
        .iter()
        .map(|perm| net.logits(permute_rows(x, perm).view()))
        .collect()
}

fn check_width(group: &FiniteGroup, width: usize) -> Result<()> {
    let side = group.grid_side();
    if width != side * side {
        return Err(Error::GridMismatch {
            expected: side,
            rows: width,
            cols: 1,
        });
    }
    Ok(())
}

/// `KL(softmax(p) || softmax(q))` in nats.
pub fn kl_from_logits(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    let lp = log_softmax(p);
    let lq = log_softmax(q);
    lp.iter()
        .zip(lq.iter())
        .map(|(&a, &b)| a.exp() * (a - b))
        .sum::<f64>()
        .max(0.0)
}

pub fn half_squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    0.5 * a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

/// Cosine similarity of two flattened maps; 0 when either has zero norm.
pub fn cosine_similarity(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Per-element mean of `term(base_row, transformed_row)`; element 0 is the base itself.
fn per_element_means<F>(orbit: &[Array2<f64>], term: F) -> Vec<f64>
where
    F: Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64,
{
    let base = &orbit[0];
    let n = base.nrows().max(1) as f64;
    orbit
        .iter()
        .map(|moved| {
            base.axis_iter(Axis(0))
                .zip(moved.axis_iter(Axis(0)))
                .map(|(a, b)| term(a, b))
                .sum::<f64>()
                / n
        })
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// DI per element from orbit logits (`orbit[0]` must be the untransformed logits).
pub fn di_from_orbit(orbit: &[Array2<f64>]) -> Vec<f64> {
    per_element_means(orbit, kl_from_logits)
}

/// LI per element from orbit logits.
pub fn li_from_orbit(orbit: &[Array2<f64>]) -> Vec<f64> {
    per_element_means(orbit, half_squared_distance)
}

/// Mean KL divergence between the predictive distributions of `x` and `gx`.
pub fn di(net: &Mlp, data: &Dataset, group: &FiniteGroup) -> Result<f64> {
    Ok(mean(&di_from_orbit(&orbit_logits(net, data.pixels(), group)?)))
}

/// Mean half squared distance between the logits of `x` and `gx`.
pub fn li(net: &Mlp, data: &Dataset, group: &FiniteGroup) -> Result<f64> {
    Ok(mean(&li_from_orbit(&orbit_logits(net, data.pixels(), group)?)))
}

/// Integrated gradients of the `labels[i]` logit from the zero baseline for every row,
/// using a midpoint Riemann sum with `steps` points.
pub fn integrated_gradients(
    net: &Mlp,
    x: ArrayView2<f64>,
    labels: &[u8],
    steps: usize,
) -> Result<Array2<f64>> {
    if steps == 0 {
        return Err(Error::Config("integrated gradients need at least one step".into()));
    }
    if labels.len() != x.nrows() {
        return Err(Error::Shape("one label per row required".into()));
    }
    let classes = net.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Config(format!("label {bad} out of range for {classes} classes")));
    }
    let d = x.ncols();
    let per_chunk = (512 / steps).max(1);
    let mut out = Array2::zeros(x.dim());
    let mut start = 0;
    while start < x.nrows() {
        let end = (start + per_chunk).min(x.nrows());
        let rows = (end - start) * steps;
        let mut path = Array2::zeros((rows, d));
        let mut grad = Array2::zeros((rows, classes));
        for (j, i) in (start..end).enumerate() {
            for k in 0..steps {
                let alpha = (k as f64 + 0.5) / steps as f64;
                let r = j * steps + k;
                path.row_mut(r).assign(&(&x.row(i) * alpha));
                grad[[r, labels[i] as usize]] = 1.0;
            }
        }
        let cache = net.forward_batch(path.view())?;
        let dx = net.input_gradient(&cache, grad.view())?;
        for (j, i) in (start..end).enumerate() {
            let avg = dx
                .slice(ndarray::s![j * steps..(j + 1) * steps, ..])
                .sum_axis(Axis(0))
                / steps as f64;
            out.row_mut(i).assign(&(&avg * &x.row(i)));
        }
        start = end;
    }
    Ok(out)
}

/// Normalized 3x3 Gaussian kernel.
fn gaussian_kernel3(sigma: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 1.0, j as f64 - 1.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    k
}

/// How the blur treats pixels outside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlurBoundary {
    /// Out-of-grid pixels are zero.
    Zero,
    /// Columns wrap around; rows are zero padded. Commutes with cyclic x-shifts.
    WrapColumns,
}

impl BlurBoundary {
    /// Boundary under which the blur commutes with every element of `group`.
    pub fn for_group(group: &FiniteGroup) -> Self {
        match group.kind() {
            GroupKind::TransX3 => BlurBoundary::WrapColumns,
            GroupKind::Identity | GroupKind::Rot4 => BlurBoundary::Zero,
        }
    }
}

/// 3x3 Gaussian blur with zero padding.
pub fn gaussian_blur3(map: ArrayView2<f64>, sigma: f64) -> Array2<f64> {
    gaussian_blur3_with(map, sigma, BlurBoundary::Zero)
}

pub fn gaussian_blur3_with(map: ArrayView2<f64>, sigma: f64, boundary: BlurBoundary) -> Array2<f64> {
    let k = gaussian_kernel3(sigma);
    let (h, w) = map.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut s = 0.0;
        for (di, row) in k.iter().enumerate() {
            for (dj, &kv) in row.iter().enumerate() {
                let y = i as isize + di as isize - 1;
                let mut x = j as isize + dj as isize - 1;
                if boundary == BlurBoundary::WrapColumns {
                    x = x.rem_euclid(w as isize);
                }
                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                    s += kv * map[[y as usize, x as usize]];
                }
            }
        }
        s
    })
}

/// Absolute value, thresholding at a fraction of the maximum, then smoothing.
pub fn saliency_from_attribution(attribution: ArrayView1<f64>, side: usize) -> SaliencyMap {
    saliency_from_attribution_with(attribution, side, BlurBoundary::Zero)
}

pub fn saliency_from_attribution_with(
    attribution: ArrayView1<f64>,
    side: usize,
    boundary: BlurBoundary,
) -> SaliencyMap {
    let abs = attribution.mapv(f64::abs);
    let max = abs.fold(0.0f64, |m, &v| m.max(v));
    let cut = SALIENCY_THRESHOLD * max;
    let kept = abs.mapv(|v| if v < cut { 0.0 } else { v });
    let grid = kept
        .into_shape_with_order((side, side))
        .expect("attribution length is side*side");
    SaliencyMap {
        values: gaussian_blur3_with(grid.view(), BLUR_SIGMA, boundary),
    }
}

/// Saliency map of one image for the logit of `label`.
pub fn saliency(net: &Mlp, img: ArrayView2<f64>, label: u8, steps: usize) -> Result<SaliencyMap> {
    let (h, w) = img.dim();
    if h != w {
        return Err(Error::Shape("saliency expects a square image".into()));
    }
    let flat: Array1<f64> = img.iter().copied().collect();
    let ig = integrated_gradients(net, flat.view().insert_axis(Axis(0)), &[label], steps)?;
    Ok(saliency_from_attribution(ig.row(0), h))
}

fn saliency_rows(
    net: &Mlp,
    x: ArrayView2<f64>,
    labels: &[u8],
    side: usize,
    steps: usize,
    boundary: BlurBoundary,
) -> Result<Array2<f64>> {
    let ig = integrated_gradients(net, x, labels, steps)?;
    let mut maps = Array2::zeros(ig.dim());
    for (src, mut dst) in ig.axis_iter(Axis(0)).zip(maps.axis_iter_mut(Axis(0))) {
        let m = saliency_from_attribution_with(src, side, boundary);
        dst.assign(&Array1::from_iter(m.values.iter().copied()));
    }
    Ok(maps)
}

/// SI per element from base maps and maps of transformed inputs already
/// realigned to the base orientation. `realigned[0]` belongs to the identity
/// and always scores 1.
pub fn si_from_maps(base: ArrayView2<f64>, realigned: &[Array2<f64>]) -> Vec<f64> {
    let n = base.nrows().max(1) as f64;
    realigned
        .iter()
        .enumerate()
        .map(|(k, maps)| {
            if k == 0 {
                return 1.0;
            }
            base.axis_iter(Axis(0))
                .zip(maps.axis_iter(Axis(0)))
                .map(|(a, b)| cosine_similarity(a, b))
                .sum::<f64>()
                / n
        })
        .collect()
}

fn si_per_element(net: &Mlp, data: &Dataset, group: &FiniteGroup, steps: usize) -> Result<Vec<f64>> {
    check_width(group, data.pixels().ncols())?;
    let side = group.grid_side();
    let boundary = BlurBoundary::for_group(group);
    let base = saliency_rows(net, data.pixels(), data.labels(), side, steps, boundary)?;
    let mut realigned = vec![base.clone()];
    for g in group.elements().skip(1) {
        let moved = permute_rows(data.pixels(), &g.permutation());
        let maps = saliency_rows(net, moved.view(), data.labels(), side, steps, boundary)?;
        realigned.push(permute_rows(maps.view(), &g.inverse().permutation()));
    }
    Ok(si_from_maps(base.view(), &realigned))
}

/// Mean cosine similarity between `m(x)` and `g^-1 m(gx)`, using the true label.
pub fn si(net: &Mlp, data: &Dataset, group: &FiniteGroup, steps: usize) -> Result<f64> {
    Ok(mean(&si_per_element(net, data, group, steps)?))
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy_from_logits(logits: ArrayView2<f64>, labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &l)| argmax(*row) == l as usize)
        .count();
    correct as f64 / labels.len() as f64
}

pub fn accuracy(net: &Mlp, data: &Dataset) -> Result<f64> {
    Ok(accuracy_from_logits(net.logits(data.pixels())?.view(), data.labels()))
}

/// `Acc(drifted) / Acc(base)`.
pub fn accuracy_drop_ratio(net: &Mlp, base: &Dataset, drifted: &Dataset) -> Result<f64> {
    let base_acc = accuracy(net, base)?;
    if base_acc == 0.0 {
        return Err(Error::DegenerateAccuracy);
    }
    Ok(accuracy(net, drifted)? / base_acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ig_steps: usize,
    /// Number of leading samples used for SI (saliency is the expensive part).
    pub si_samples: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ig_steps: DEFAULT_IG_STEPS,
            si_samples: Some(1000),
        }
    }
}

/// Accuracy, DI, LI and SI with per-element breakdown.
pub fn evaluate(net: &Mlp, data: &Dataset, group: &FiniteGroup, opts: EvalOptions) -> Result<InvarianceReport> {
    let orbit = orbit_logits(net, data.pixels(), group)?;
    let accuracy = accuracy_from_logits(orbit[0].view(), data.labels());
    let di_el = di_from_orbit(&orbit);
    let li_el = li_from_orbit(&orbit);
    let si_n = opts.si_samples.unwrap_or(data.len()).min(data.len());
    let si_el = if si_n == 0 {
        vec![f64::NAN; group.order()]
    } else {
        si_per_element(net, &data.head(si_n), group, opts.ig_steps)?
    };
    let per_element = (0..group.order())
        .map(|k| ElementMetrics {
            element: k,
            di: di_el[k],
            li: li_el[k],
            si: si_el[k],
        })
        .collect();
    Ok(InvarianceReport {
        accuracy,
        di: mean(&di_el),
        li: mean(&li_el),
        si: mean(&si_el),
        per_element,
        samples: data.len(),
        si_samples: si_n,
    })
}
