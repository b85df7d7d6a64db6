//! Input sensitivity of a network (largest singular value of its input
//! Jacobian) and numerical checks of spectral decay under logit-invariance
//! gradient flow on a linear model `h(x) = Wx`.

use log::warn;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::groups::{FiniteGroup, GroupKind};
use crate::network::Mlp;

pub const POWER_TOLERANCE: f64 = 1e-8;
pub const POWER_MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaMethod {
    FullJacobianSvd,
    PowerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub sigma: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value of `m` by power iteration on `mᵀm`, stopping when
/// the Rayleigh quotient changes by less than `tol` relative.
pub fn power_sigma_max(m: ArrayView2<f64>, tol: f64, max_iter: usize) -> SigmaEstimate {
    let n = m.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Array1<f64> = Array1::from_shape_simple_fn(n, || rng.random_range(0.5..1.5));
    v /= v.dot(&v).sqrt();
    let mut lambda = 0.0;
    for it in 1..=max_iter {
        let mv = m.dot(&v);
        let w = m.t().dot(&mv);
        let next = mv.dot(&mv);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return SigmaEstimate {
                sigma: 0.0,
                iterations: it,
                converged: true,
            };
        }
        v = w / norm;
        if (next - lambda).abs() <= tol * next {
            return SigmaEstimate {
                sigma: next.sqrt(),
                iterations: it,
                converged: true,
            };
        }
        lambda = next;
    }
    SigmaEstimate {
        sigma: lambda.sqrt(),
        iterations: max_iter,
        converged: false,
    }
}

/// Jacobian of the logits with respect to the input at each row of `x`,
/// returned as one `classes x d` matrix per row.
pub fn jacobians(net: &Mlp, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
    let c = net.num_classes();
    let d = net.input_dim();
    const ROWS_PER_CHUNK: usize = 64;
    let mut out = Vec::with_capacity(x.nrows());
    let mut start = 0;
    while start < x.nrows() {
        let end = (start + ROWS_PER_CHUNK).min(x.nrows());
        let n = end - start;
        let mut rep = Array2::zeros((n * c, x.ncols()));
        let mut seed = Array2::zeros((n * c, c));
        for j in 0..n {
            for k in 0..c {
                rep.row_mut(j * c + k).assign(&x.row(start + j));
                seed[[j * c + k, k]] = 1.0;
            }
        }
        let cache = net.forward_batch(rep.view())?;
        let dx = net.input_gradient(&cache, seed.view())?;
        for j in 0..n {
            let jac = dx.slice(s![j * c..(j + 1) * c, ..]).to_owned();
            debug_assert_eq!(jac.ncols(), d);
            out.push(jac);
        }
        start = end;
    }
    Ok(out)
}

pub fn jacobian(net: &Mlp, x: ArrayView1<f64>) -> Result<Array2<f64>> {
    Ok(jacobians(net, x.insert_axis(Axis(0)))?.pop().expect("one row"))
}

/// Largest singular value of the input Jacobian at `x`.
pub fn jacobian_sigma_max(net: &Mlp, x: ArrayView1<f64>) -> Result<SigmaEstimate> {
    let j = jacobian(net, x)?;
    let est = power_sigma_max(j.view(), POWER_TOLERANCE, POWER_MAX_ITERATIONS);
    if !est.converged {
        warn!("power iteration stopped at {} iterations", est.iterations);
    }
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub per_sample: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    pub method: SigmaMethod,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub total_iterations: usize,
    pub unconverged: usize,
}

/// `σ_max(J)` over the first `limit` samples of `data` (all when `None`).
pub fn spectral_report(net: &Mlp, data: &Dataset, limit: Option<usize>) -> Result<SpectralReport> {
    let n = limit.unwrap_or(data.len()).min(data.len());
    if n == 0 {
        return Err(Error::Data("no samples for spectral report".into()));
    }
    let mut per_sample = Vec::with_capacity(n);
    let mut total_iterations = 0;
    let mut unconverged = 0;
    for jac in jacobians(net, data.pixels().slice(s![..n, ..]))? {
        let est = power_sigma_max(jac.view(), POWER_TOLERANCE, POWER_MAX_ITERATIONS);
        total_iterations += est.iterations;
        unconverged += usize::from(!est.converged);
        per_sample.push(est.sigma);
    }
    if unconverged > 0 {
        warn!("{unconverged} power iterations hit the cap");
    }
    let mean = per_sample.iter().sum::<f64>() / n as f64;
    let max = per_sample.iter().copied().fold(0.0, f64::max);
    Ok(SpectralReport {
        per_sample,
        mean,
        max,
        method: SigmaMethod::PowerIteration,
        tolerance: POWER_TOLERANCE,
        max_iterations: POWER_MAX_ITERATIONS,
        total_iterations,
        unconverged,
    })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
pub fn symmetric_eigen(a: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut v = Array2::eye(n);
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - sn * mkq;
                    m[[k, q]] = sn * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - sn * mqk;
                    m[[q, k]] = sn * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + c * vkq;
                }
            }
        }
    }
    (m.diag().to_owned(), v)
}

/// Largest singular value from the eigenvalues of the smaller Gram matrix.
pub fn sigma_max(w: ArrayView2<f64>) -> f64 {
    let gram = if w.nrows() <= w.ncols() {
        w.dot(&w.t())
    } else {
        w.t().dot(&w)
    };
    let (vals, _) = symmetric_eigen(gram.view());
    vals.iter().copied().fold(0.0, f64::max).sqrt()
}

/// Linear model `h(x) = Wx` trained on the logit invariance error between
/// `x` and `Gx` by gradient descent with step `alpha` for `steps` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFlowInstance {
    pub w0: Array2<f64>,
    pub x: Array1<f64>,
    pub g: Array2<f64>,
    pub alpha: f64,
    pub steps: usize,
}

impl LinearFlowInstance {
    pub fn new(w0: Array2<f64>, x: Array1<f64>, g: Array2<f64>, alpha: f64, steps: usize) -> Result<Self> {
        let n = x.len();
        if w0.ncols() != n || g.dim() != (n, n) {
            return Err(Error::Shape(format!(
                "W0 {:?}, x {n}, G {:?} are incompatible",
                w0.dim(),
                g.dim()
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        Ok(LinearFlowInstance { w0, x, g, alpha, steps })
    }

    /// `ε = x − Gx`.
    pub fn epsilon(&self) -> Array1<f64> {
        &self.x - &self.g.dot(&self.x)
    }

    /// `½‖Wε‖²`.
    pub fn logit_invariance(&self, w: ArrayView2<f64>) -> f64 {
        let we = w.dot(&self.epsilon());
        0.5 * we.dot(&we)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    /// `σ_max(W_t)` for `t = 0..=steps`.
    pub sigma: Vec<f64>,
    /// `½‖W_t ε‖²` for `t = 0..=steps`.
    pub li: Vec<f64>,
    pub final_w: Array2<f64>,
}

/// Euler steps `W ← W − α (Wε) εᵀ`, requiring `α‖ε‖² < 2`.
pub fn flow_simulate(inst: &LinearFlowInstance) -> Result<FlowTrajectory> {
    let eps = inst.epsilon();
    let e2 = eps.dot(&eps);
    if inst.alpha * e2 >= 2.0 {
        return Err(Error::UnstableStep(inst.alpha * e2));
    }
    let mut w = inst.w0.clone();
    let mut sigma = Vec::with_capacity(inst.steps + 1);
    let mut li = Vec::with_capacity(inst.steps + 1);
    let record = |w: &Array2<f64>, sigma: &mut Vec<f64>, li: &mut Vec<f64>| {
        sigma.push(sigma_max(w.view()));
        li.push(inst.logit_invariance(w.view()));
    };
    record(&w, &mut sigma, &mut li);
    let eps_row = eps.view().insert_axis(Axis(0));
    for _ in 0..inst.steps {
        let we = w.dot(&eps).insert_axis(Axis(1));
        w.scaled_add(-inst.alpha, &we.dot(&eps_row));
        record(&w, &mut sigma, &mut li);
    }
    Ok(FlowTrajectory {
        sigma,
        li,
        final_w: w,
    })
}

/// Exact solution of the continuous flow: `W0 (I + (e^{−t εᵀε} − 1) εεᵀ / εᵀε)`.
pub fn flow_closed_form(inst: &LinearFlowInstance, t: f64) -> Array2<f64> {
    let eps = inst.epsilon();
    let e2 = eps.dot(&eps);
    if e2 == 0.0 {
        return inst.w0.clone();
    }
    let coef = (-t * e2).exp_m1() / e2;
    let we = inst.w0.dot(&eps).insert_axis(Axis(1));
    &inst.w0 + &(we.dot(&eps.view().insert_axis(Axis(0))) * coef)
}

/// Outcome of the three checks on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceChecks {
    /// `σ_max(W(t)) − σ_max(W(0))` maximized over a grid of `t` up to `t εᵀε = 40`.
    pub sigma_increase: f64,
    /// `|‖exp(−Λt)‖₂ − 1|` from the eigen-decomposition of `Σ = εεᵀ`.
    pub expm_norm_error: f64,
    /// Relative Frobenius error between Euler steps and the exact solution.
    pub simulation_error: f64,
}

impl InstanceChecks {
    pub fn a(&self) -> bool {
        self.sigma_increase <= 1e-9
    }
    pub fn b(&self) -> bool {
        self.expm_norm_error <= 1e-10
    }
    pub fn c(&self) -> bool {
        self.simulation_error <= 1e-3
    }
}

/// Runs the three checks; simulation uses `inst.alpha` up to `t εᵀε = 1`.
pub fn check_instance(inst: &LinearFlowInstance) -> Result<InstanceChecks> {
    let eps = inst.epsilon();
    let e2 = eps.dot(&eps);
    let s0 = sigma_max(inst.w0.view());

    let t_end = if e2 > 0.0 { 40.0 / e2 } else { 1.0 };
    let mut sigma_increase = f64::NEG_INFINITY;
    for k in 0..=20 {
        let t = t_end * k as f64 / 20.0;
        let s = sigma_max(flow_closed_form(inst, t).view());
        sigma_increase = sigma_increase.max(s - s0);
    }

    let sigma = eps.view().insert_axis(Axis(1)).dot(&eps.view().insert_axis(Axis(0)));
    let (lambda, _) = symmetric_eigen(sigma.view());
    let expm_norm = lambda
        .iter()
        .map(|&l| (-l * t_end).exp())
        .fold(0.0, f64::max);
    let expm_norm_error = (expm_norm - 1.0).abs();

    let t_sim = if e2 > 0.0 { 1.0 / e2 } else { 1.0 };
    let steps = (t_sim / inst.alpha).round().max(1.0) as usize;
    let sim = LinearFlowInstance {
        steps,
        ..inst.clone()
    };
    let euler = euler_final(&sim)?;
    let exact = flow_closed_form(inst, steps as f64 * inst.alpha);
    let diff = &euler - &exact;
    let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let simulation_error = norm(&diff) / norm(&exact).max(f64::MIN_POSITIVE);

    Ok(InstanceChecks {
        sigma_increase,
        expm_norm_error,
        simulation_error,
    })
}

fn euler_final(inst: &LinearFlowInstance) -> Result<Array2<f64>> {
    let eps = inst.epsilon();
    let e2 = eps.dot(&eps);
    if inst.alpha * e2 >= 2.0 {
        return Err(Error::UnstableStep(inst.alpha * e2));
    }
    let mut w = inst.w0.clone();
    let eps_row = eps.view().insert_axis(Axis(0));
    for _ in 0..inst.steps {
        let we = w.dot(&eps).insert_axis(Axis(1));
        w.scaled_add(-inst.alpha, &we.dot(&eps_row));
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub trials: usize,
    pub pass_a: usize,
    pub pass_b: usize,
    pub pass_c: usize,
    pub max_sigma_increase: f64,
    pub max_expm_norm_error: f64,
    pub max_simulation_error: f64,
}

/// Random orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut q: Array2<f64> = Array2::zeros((n, n));
    let mut k = 0;
    while k < n {
        let mut v = Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng));
        for _ in 0..2 {
            for j in 0..k {
                let qj = q.column(j).to_owned();
                let proj = qj.dot(&v);
                v.scaled_add(-proj, &qj);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            q.column_mut(k).assign(&(v / norm));
            k += 1;
        }
    }
    q
}

const INSTANCE_SIDE: usize = 6;
const INSTANCE_ROWS: usize = 9;
/// Euler step relative to `1/εᵀε` in the simulation check.
const INSTANCE_STEP: f64 = 1e-4;

/// Random instance: Gaussian `W0`, `x ~ N(0, 1/n)`, `G` a non-trivial group
/// permutation or a random orthogonal matrix.
pub fn random_instance<R: Rng>(rng: &mut R) -> Result<LinearFlowInstance> {
    let n = INSTANCE_SIDE * INSTANCE_SIDE;
    let w0 = Array2::from_shape_simple_fn((INSTANCE_ROWS, n), || StandardNormal.sample(rng));
    let x = Array1::from_shape_simple_fn(n, || {
        let z: f64 = StandardNormal.sample(rng);
        z / (n as f64).sqrt()
    });
    let g = match rng.random_range(0..3) {
        0 => FiniteGroup::new(GroupKind::Rot4, INSTANCE_SIDE)?
            .element(rng.random_range(1..4))?
            .representation(),
        1 => FiniteGroup::new(GroupKind::TransX3, INSTANCE_SIDE)?
            .element(rng.random_range(1..3))?
            .representation(),
        _ => random_orthogonal(n, rng),
    };
    let eps = &x - &g.dot(&x);
    let e2 = eps.dot(&eps).max(f64::MIN_POSITIVE);
    let alpha = INSTANCE_STEP / e2;
    LinearFlowInstance::new(w0, x, g, alpha, 0)
}

/// Checks spectral decay on `trials` random instances.
pub fn verify_proposition1(trials: usize, seed: u64) -> Result<PropositionReport> {
    if trials == 0 {
        return Err(Error::Config("at least one trial required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PropositionReport {
        trials,
        pass_a: 0,
        pass_b: 0,
        pass_c: 0,
        max_sigma_increase: f64::NEG_INFINITY,
        max_expm_norm_error: 0.0,
        max_simulation_error: 0.0,
    };
    for _ in 0..trials {
        let inst = random_instance(&mut rng)?;
        let c = check_instance(&inst)?;
        report.pass_a += usize::from(c.a());
        report.pass_b += usize::from(c.b());
        report.pass_c += usize::from(c.c());
        report.max_sigma_increase = report.max_sigma_increase.max(c.sigma_increase);
        report.max_expm_norm_error = report.max_expm_norm_error.max(c.expm_norm_error);
        report.max_simulation_error = report.max_simulation_error.max(c.simulation_error);
    }
    Ok(report)
}
