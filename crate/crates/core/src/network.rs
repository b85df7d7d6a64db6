//! Dense ReLU networks with hand-written backpropagation.
//!
//! The first layer can be tied over a finite group: it is evaluated on every
//! transformed copy of the input and the activations are averaged, which makes
//! the whole network exactly invariant. Only one first-layer matrix is stored.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Cursor;
use crate::error::{Error, Result};
use crate::groups::{permute_rows, scatter_add_rows, FiniteGroup, GroupKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FirstLayerMode {
    Plain,
    /// Lift over the group and mean-pool the first-layer activations.
    GroupTied(FiniteGroup),
}

/// Layer widths and first-layer mode of a network to be initialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_side: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub first_layer: FirstLayerMode,
}

impl NetSpec {
    /// 1296 -> 128 x5 -> 9, about 233k parameters.
    pub fn standard(first_layer: FirstLayerMode) -> Self {
        NetSpec {
            input_side: 36,
            hidden: vec![128; 5],
            classes: 9,
            first_layer,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_side * self.input_side];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.classes);
        dims
    }
}

/// Weight matrix (out x in) and bias of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            w: Array2::zeros((out, inp)),
            b: Array1::zeros(out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    fn affine(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.w.t());
        z += &self.b;
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    first_layer: FirstLayerMode,
}

/// Gradients with the same layout as the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.scaled_add(scale, &b.w);
            a.b.scaled_add(scale, &b.b);
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values().nth(index).expect("gradient index in range")
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Activations saved by [`Mlp::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    signature: Vec<(usize, usize)>,
    input: Array2<f64>,
    /// First-layer pre-activations, one per group element when tied.
    first_pre: Vec<Array2<f64>>,
    /// Pre-activations of layers 1.. (index 0 unused).
    pre: Vec<Array2<f64>>,
    /// Output of every layer after its nonlinearity; the last entry is the logits.
    out: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.out.last().expect("at least one layer").view()
    }
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

fn relu_mask_into(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    grad.zip_mut_with(pre, |g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
}

impl Mlp {
    pub fn new(layers: Vec<Dense>, first_layer: FirstLayerMode) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.out_dim() {
                return Err(Error::Shape(format!("layer {i} bias length mismatch")));
            }
        }
        if let FirstLayerMode::GroupTied(g) = first_layer {
            let side = g.grid_side();
            if layers[0].in_dim() != side * side {
                return Err(Error::GridMismatch {
                    expected: side,
                    rows: layers[0].in_dim(),
                    cols: 1,
                });
            }
        }
        Ok(Mlp {
            layers,
            first_layer,
        })
    }

    /// He-uniform fan-in initialization with zero biases.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        let dims = spec.dims();
        if dims.contains(&0) {
            return Err(Error::Shape("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (inp, out) = (d[0], d[1]);
                let bound = (6.0 / inp as f64).sqrt();
                Dense {
                    w: Array2::from_shape_simple_fn((out, inp), || rng.random_range(-bound..bound)),
                    b: Array1::zeros(out),
                }
            })
            .collect();
        Mlp::new(layers, spec.first_layer)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn first_layer_mode(&self) -> FirstLayerMode {
        self.first_layer
    }

    pub fn is_group_tied(&self) -> bool {
        matches!(self.first_layer, FirstLayerMode::GroupTied(_))
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn signature(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.out_dim(), l.in_dim())).collect()
    }

    /// Parameter `index` in the flattened order (per layer: weights row-major, then bias).
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.w.len() {
                let cols = l.w.ncols();
                return &mut l.w[[index / cols, index % cols]];
            }
            index -= l.w.len();
            if index < l.b.len() {
                return &mut l.b[index];
            }
            index -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Scales the last layer, which scales every logit by `c`.
    pub fn scale_output(&mut self, c: f64) {
        let last = self.layers.last_mut().unwrap();
        last.w *= c;
        last.b *= c;
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, ForwardCache)> {
        let batch = x.insert_axis(Axis(0));
        let cache = self.forward_batch(batch)?;
        let logits = cache.logits().row(0).to_owned();
        Ok((logits, cache))
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let last = self.layers.len() - 1;
        let first = &self.layers[0];
        let mut first_pre = Vec::new();
        let h = match self.first_layer {
            FirstLayerMode::Plain => {
                let z = first.affine(x);
                let h = if last == 0 { z.clone() } else { relu(&z) };
                first_pre.push(z);
                h
            }
            FirstLayerMode::GroupTied(group) => {
                let mut acc = Array2::zeros((x.nrows(), first.out_dim()));
                for perm in group.permutations() {
                    let xg = permute_rows(x, &perm);
                    let z = first.affine(xg.view());
                    if last == 0 {
                        acc += &z;
                    } else {
                        acc.zip_mut_with(&z, |a, &v| *a += v.max(0.0));
                    }
                    first_pre.push(z);
                }
                acc /= group.order() as f64;
                acc
            }
        };
        let mut pre = vec![Array2::zeros((0, 0))];
        let mut out = vec![h];
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let z = layer.affine(out[i - 1].view());
            let a = if i == last { z.clone() } else { relu(&z) };
            pre.push(z);
            out.push(a);
        }
        Ok(ForwardCache {
            signature: self.signature(),
            input: x.to_owned(),
            first_pre,
            pre,
            out,
        })
    }

    /// Logits for every row, evaluated in chunks to bound memory.
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        const CHUNK: usize = 1024;
        let mut out = Array2::zeros((x.nrows(), self.num_classes()));
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + CHUNK).min(x.nrows());
            let cache = self.forward_batch(x.slice(ndarray::s![start..end, ..]))?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&cache.logits());
            start = end;
        }
        Ok(out)
    }

    /// Parameter gradients of `sum_rows <grad_logits, logits>`.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: ArrayView2<f64>) -> Result<Gradients> {
        let (grads, _) = self.backprop(cache, grad_logits, true, false)?;
        Ok(grads.expect("requested"))
    }

    /// Gradient of `sum_rows <grad_logits, logits>` with respect to the inputs.
    pub fn input_gradient(
        &self,
        cache: &ForwardCache,
        grad_logits: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let (_, dx) = self.backprop(cache, grad_logits, false, true)?;
        Ok(dx.expect("requested"))
    }

    pub fn backward_full(
        &self,
        cache: &ForwardCache,
        grad_logits: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let (g, dx) = self.backprop(cache, grad_logits, true, true)?;
        Ok((g.expect("requested"), dx.expect("requested")))
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        grad_logits: ArrayView2<f64>,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<Gradients>, Option<Array2<f64>>)> {
        if cache.signature != self.signature() {
            return Err(Error::CacheMismatch("layer shapes differ".into()));
        }
        let expected_first = match self.first_layer {
            FirstLayerMode::Plain => 1,
            FirstLayerMode::GroupTied(g) => g.order(),
        };
        if cache.first_pre.len() != expected_first {
            return Err(Error::CacheMismatch("first-layer mode differs".into()));
        }
        if grad_logits.dim() != (cache.batch_size(), self.num_classes()) {
            return Err(Error::CacheMismatch(format!(
                "gradient shape {:?} does not match batch {} x {}",
                grad_logits.dim(),
                cache.batch_size(),
                self.num_classes()
            )));
        }

        let last = self.layers.len() - 1;
        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut upstream = grad_logits.to_owned();

        for i in (1..=last).rev() {
            let mut dz = upstream;
            if i != last {
                relu_mask_into(&mut dz, &cache.pre[i]);
            }
            if let Some(g) = grads.as_mut() {
                g.layers[i].w = dz.t().dot(&cache.out[i - 1]);
                g.layers[i].b = dz.sum_axis(Axis(0));
            }
            upstream = dz.dot(&self.layers[i].w);
        }

        let first = &self.layers[0];
        let mut dx = None;
        match self.first_layer {
            FirstLayerMode::Plain => {
                let mut dz = upstream;
                if last != 0 {
                    relu_mask_into(&mut dz, &cache.first_pre[0]);
                }
                if let Some(g) = grads.as_mut() {
                    g.layers[0].w = dz.t().dot(&cache.input);
                    g.layers[0].b = dz.sum_axis(Axis(0));
                }
                if want_input {
                    dx = Some(dz.dot(&first.w));
                }
            }
            FirstLayerMode::GroupTied(group) => {
                upstream /= group.order() as f64;
                let mut acc_dx = want_input.then(|| Array2::zeros(cache.input.dim()));
                for (perm, pre) in group.permutations().iter().zip(&cache.first_pre) {
                    let mut dz = upstream.clone();
                    if last != 0 {
                        relu_mask_into(&mut dz, pre);
                    }
                    if let Some(g) = grads.as_mut() {
                        let xg = permute_rows(cache.input.view(), perm);
                        g.layers[0].w += &dz.t().dot(&xg);
                        g.layers[0].b += &dz.sum_axis(Axis(0));
                    }
                    if let Some(acc) = acc_dx.as_mut() {
                        let dxg = dz.dot(&first.w);
                        scatter_add_rows(acc, dxg.view(), perm);
                    }
                }
                dx = acc_dx;
            }
        }
        Ok((grads, dx))
    }

    const MAGIC: &'static [u8; 8] = b"GINVNET1";

    /// Binary checkpoint: `GINVNET1`, mode tag u8, group tag u8, grid side u32,
    /// layer count u32, (out, in) u32 pairs, then per layer the row-major
    /// weights followed by the bias, all little-endian f64.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        let (mode, group, side) = match self.first_layer {
            FirstLayerMode::Plain => (0u8, 0u8, 0u32),
            FirstLayerMode::GroupTied(g) => (
                1,
                match g.kind() {
                    GroupKind::Identity => 1,
                    GroupKind::Rot4 => 2,
                    GroupKind::TransX3 => 3,
                },
                g.grid_side() as u32,
            ),
        };
        w.write_all(&[mode, group])?;
        w.write_all(&side.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.out_dim() as u32).to_le_bytes())?;
            w.write_all(&(l.in_dim() as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.param_count() * 8);
        for l in &self.layers {
            for v in l.w.iter().chain(l.b.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor::new(&bytes);
        if cur.take(8)? != Self::MAGIC {
            return Err(Error::Format("not a GINVNET1 checkpoint".into()));
        }
        let tags = cur.take(2)?;
        let side = cur.u32()? as usize;
        let first_layer = match (tags[0], tags[1]) {
            (0, _) => FirstLayerMode::Plain,
            (1, kind) => {
                let kind = match kind {
                    1 => GroupKind::Identity,
                    2 => GroupKind::Rot4,
                    3 => GroupKind::TransX3,
                    k => return Err(Error::Format(format!("unknown group tag {k}"))),
                };
                FirstLayerMode::GroupTied(FiniteGroup::new(kind, side)?)
            }
            (m, _) => return Err(Error::Format(format!("unknown first-layer tag {m}"))),
        };
        let n = cur.u32()? as usize;
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            shapes.push((cur.u32()? as usize, cur.u32()? as usize));
        }
        let mut layers = Vec::with_capacity(n);
        for (out, inp) in shapes {
            let mut w = Vec::with_capacity(out * inp);
            for _ in 0..out * inp {
                w.push(cur.f64()?);
            }
            let mut b = Vec::with_capacity(out);
            for _ in 0..out {
                b.push(cur.f64()?);
            }
            layers.push(Dense {
                w: Array2::from_shape_vec((out, inp), w).map_err(|e| Error::Format(e.to_string()))?,
                b: Array1::from(b),
            });
        }
        if cur.remaining() != 0 {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Mlp::new(layers, first_layer)
    }
}

/// Numerically stable log-softmax of one logit vector.
pub fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits.mapv(|v| v - lse)
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    log_softmax(logits).mapv(f64::exp)
}

/// Cross-entropy `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn cross_entropy(logits: ArrayView1<f64>, label: usize) -> (f64, Array1<f64>) {
    let logp = log_softmax(logits);
    let mut grad = logp.mapv(f64::exp);
    grad[label] -= 1.0;
    (-logp[label], grad)
}

/// Mean cross-entropy over a batch, with the gradient of the mean.
pub fn cross_entropy_batch(logits: ArrayView2<f64>, labels: &[u8]) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for (i, (row, &label)) in logits.axis_iter(Axis(0)).zip(labels).enumerate() {
        let (loss, g) = cross_entropy(row, label as usize);
        total += loss;
        grad.row_mut(i).assign(&(g / n as f64));
    }
    (total / n as f64, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0008,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }
}

/// One bias-corrected Adam update of `net` in place.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let shapes_match = grads.layers.len() == net.layers.len()
        && state.m.layers.len() == net.layers.len()
        && grads
            .layers
            .iter()
            .zip(&net.layers)
            .zip(&state.m.layers)
            .all(|((g, p), m)| g.w.dim() == p.w.dim() && m.w.dim() == p.w.dim() && g.b.len() == p.b.len());
    if !shapes_match {
        return Err(Error::Shape("gradients do not match parameters".into()));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (((layer, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.layers.iter_mut())
        .zip(state.v.layers.iter_mut())
    {
        ndarray::Zip::from(&mut layer.w)
            .and(&mut m.w)
            .and(&mut v.w)
            .and(&g.w)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut layer.b)
            .and(&mut m.b)
            .and(&mut v.b)
            .and(&g.b)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}
