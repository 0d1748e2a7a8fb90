//! Fitting network parameters to a field by minimizing a Sobolev loss.
//!
//! Full-batch Adam with a cosine schedule does the work. An optional damped
//! Gauss-Newton (Levenberg-Marquardt) phase can run first; it is off by
//! default because it leaves the network badly scaled for the time stepper.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, Par, Side};
use serde::{Deserialize, Serialize};

use crate::error::{structure, validation, Error, Result};
use crate::network::{ArchSpec, BatchEval, DerivOrder, ParamVector};
use crate::pde::{staggered_grid, CollocationSet, GridScheme, PdeProblem};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the initial rate down to `lr_floor` times it over
    /// `decay_steps`, then constant.
    #[default]
    CosineDecay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Equidistant target points per spatial dimension.
    pub n_points: Vec<usize>,
    /// Optional Levenberg-Marquardt pre-phase, 0 disables it.
    #[serde(default = "defaults::gauss_newton_iterations")]
    pub gauss_newton_iterations: usize,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default = "defaults::decay_steps")]
    pub decay_steps: usize,
    #[serde(default = "defaults::lr_floor")]
    pub lr_floor: f64,
    #[serde(default = "defaults::deriv_weight")]
    pub deriv_weight: f64,
    /// Stop once the held-out relative L2 error drops below this.
    #[serde(default = "defaults::target_tolerance")]
    pub target_tolerance: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// Adam iterations between held-out error checks.
    #[serde(default = "defaults::check_every")]
    pub check_every: usize,
}

mod defaults {
    pub fn gauss_newton_iterations() -> usize {
        0
    }
    pub fn iterations() -> usize {
        200_000
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn decay_steps() -> usize {
        200_000
    }
    pub fn lr_floor() -> f64 {
        1e-2
    }
    pub fn deriv_weight() -> f64 {
        1.0
    }
    pub fn target_tolerance() -> f64 {
        1e-5
    }
    pub fn check_every() -> usize {
        50
    }
}

impl FitConfig {
    pub fn new(n_points: Vec<usize>) -> Self {
        Self {
            n_points,
            gauss_newton_iterations: defaults::gauss_newton_iterations(),
            iterations: defaults::iterations(),
            learning_rate: defaults::learning_rate(),
            lr_schedule: LrSchedule::CosineDecay,
            decay_steps: defaults::decay_steps(),
            lr_floor: defaults::lr_floor(),
            deriv_weight: defaults::deriv_weight(),
            target_tolerance: defaults::target_tolerance(),
            rng_seed: 0,
            check_every: defaults::check_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points.iter().any(|&c| c < 2) || self.n_points.is_empty() {
            return Err(validation("n_points needs at least 2 points per dimension"));
        }
        if !(self.learning_rate > 0.0) || self.deriv_weight < 0.0 || self.target_tolerance < 0.0 {
            return Err(validation("learning_rate must be positive, deriv_weight and target_tolerance nonnegative"));
        }
        if self.check_every == 0 || (self.lr_schedule == LrSchedule::CosineDecay && self.decay_steps == 0) {
            return Err(validation("check_every and decay_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(validation("lr_floor must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iter: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::CosineDecay => {
                let frac = iter.min(self.decay_steps) as f64 / self.decay_steps as f64;
                let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
                self.learning_rate * (self.lr_floor + (1.0 - self.lr_floor) * cos)
            }
        }
    }
}

/// Target values and spatial gradients at a set of points.
#[derive(Clone, Debug)]
pub struct FitTargets {
    pub points: CollocationSet,
    pub values: Vec<f64>,
    /// Dimension-major `d x n`.
    pub grads: Vec<f64>,
}

impl FitTargets {
    pub fn new(points: CollocationSet, values: Vec<f64>, grads: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(validation("fit targets are empty"));
        }
        if values.len() != n || grads.len() != n * points.dim() {
            return Err(structure("target values or gradients do not match the points"));
        }
        Ok(Self { points, values, grads })
    }

    /// Samples of `u0` and its analytic gradient.
    pub fn from_initial_condition(problem: &PdeProblem, points: CollocationSet) -> Result<Self> {
        let (n, d) = (points.len(), points.dim());
        let values = points.iter().map(|x| problem.initial_condition(x)).collect();
        let mut grads = vec![0.0; n * d];
        for (m, x) in points.iter().enumerate() {
            for (i, g) in problem.initial_gradient(x).into_iter().enumerate() {
                grads[i * n + m] = g;
            }
        }
        Self::new(points, values, grads)
    }

    /// Field samples on a periodic tensor grid; gradients from fourth-order
    /// central differences.
    pub fn from_grid_field(grid: CollocationSet, values: Vec<f64>) -> Result<Self> {
        if grid.scheme() != GridScheme::EquidistantGrid {
            return Err(validation("field samples must lie on an equidistant grid"));
        }
        let grads = periodic_gradient(&grid, &values)?;
        Self::new(grid, values, grads)
    }
}

/// Fourth-order central differences along every axis of a periodic grid,
/// dimension-major output.
pub fn periodic_gradient(grid: &CollocationSet, values: &[f64]) -> Result<Vec<f64>> {
    let shape = grid.shape();
    let n = grid.len();
    if values.len() != n {
        return Err(structure("field does not match the grid"));
    }
    if shape.iter().any(|&c| c < 5) {
        return Err(validation("finite-difference gradients need at least 5 nodes per dimension"));
    }
    let d = shape.len();
    let mut out = vec![0.0; d * n];
    for i in 0..d {
        let stride: usize = shape[i + 1..].iter().product();
        let len = shape[i];
        let h = grid.spacing()[i];
        for m in 0..n {
            let pos = (m / stride) % len;
            let base = m - pos * stride;
            let at = |k: usize| values[base + (k % len) * stride];
            out[i * n + m] =
                (-at(pos + 2) + 8.0 * at(pos + 1) - 8.0 * at(pos + len - 1) + at(pos + len - 2)) / (12.0 * h);
        }
    }
    Ok(out)
}

/// `(1/n) sum (u - u_m)^2 + deriv_weight (1/n) sum |grad u - du_m|^2`.
pub fn sobolev_loss(arch: &ArchSpec, theta: &[f64], targets: &FitTargets, deriv_weight: f64) -> Result<f64> {
    let eval = BatchEval::new(arch, theta, &targets.points, DerivOrder::First)?;
    Ok(loss_parts(&eval, targets, deriv_weight).0)
}

/// Loss, value residuals and weighted gradient residuals (dimension-major).
fn loss_parts(eval: &BatchEval<'_>, t: &FitTargets, w: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let n = t.values.len();
    let d = t.points.dim();
    let rv: Vec<f64> = eval.values().iter().zip(&t.values).map(|(a, b)| a - b).collect();
    let mut rg = vec![0.0; d * n];
    for i in 0..d {
        for (m, g) in eval.grad_x(i).iter().enumerate() {
            rg[i * n + m] = g - t.grads[i * n + m];
        }
    }
    let loss = (rv.iter().map(|r| r * r).sum::<f64>() + w * rg.iter().map(|r| r * r).sum::<f64>()) / n as f64;
    (loss, rv, rg)
}

pub fn sobolev_loss_grad(
    arch: &ArchSpec,
    theta: &[f64],
    targets: &FitTargets,
    deriv_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    let eval = BatchEval::new(arch, theta, &targets.points, DerivOrder::First)?;
    let (loss, rv, rg) = loss_parts(&eval, targets, deriv_weight);
    let n = rv.len() as f64;
    let alpha: Vec<f64> = rv.iter().map(|r| 2.0 * r / n).collect();
    let beta: Vec<f64> = rg.iter().map(|r| 2.0 * deriv_weight * r / n).collect();
    Ok((loss, eval.vjp(&alpha, Some(&beta))))
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub theta: ParamVector,
    /// Held-out relative L2 error of the returned parameters.
    pub rel_error: f64,
    pub loss: f64,
    pub converged: bool,
    pub gauss_newton_iterations: usize,
    pub adam_iterations: usize,
    /// Best-seen loss after each Gauss-Newton iteration and each Adam check.
    pub loss_history: Vec<f64>,
}

/// Samples used to measure the fit error.
#[derive(Clone, Debug)]
pub struct HeldOut {
    pub points: CollocationSet,
    pub values: Vec<f64>,
}

impl HeldOut {
    pub fn rel_error(&self, arch: &ArchSpec, theta: &[f64]) -> Result<f64> {
        let eval = BatchEval::new(arch, theta, &self.points, DerivOrder::Value)?;
        let num: f64 = eval.values().iter().zip(&self.values).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = self.values.iter().map(|b| b * b).sum();
        Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
    }
}

/// Fits `u0` on an equidistant grid of `cfg.n_points`; the error is measured
/// on a twice finer staggered grid that shares no points with the targets.
pub fn fit_initial(arch: &ArchSpec, problem: &PdeProblem, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if arch.input_dim != problem.spatial_dim() {
        return Err(structure("network input dimension differs from the problem dimension"));
    }
    let targets = FitTargets::from_initial_condition(problem, problem.make_grid(&cfg.n_points)?)?;
    let fine: Vec<usize> = cfg.n_points.iter().map(|c| 2 * c).collect();
    let points = staggered_grid(&problem.domain, &fine)?;
    let values = points.iter().map(|x| problem.initial_condition(x)).collect();
    fit_targets(arch, &targets, &HeldOut { points, values }, cfg)
}

/// Fits a field sampled on an equidistant grid. Targets are the grid nodes
/// subsampled to `cfg.n_points` (when the counts divide); the error is
/// measured on all samples.
pub fn fit_to_field(arch: &ArchSpec, grid: &CollocationSet, values: &[f64], cfg: &FitConfig) -> Result<FitResult> {
    fit_to_field_from(arch, ParamVector::init(arch, cfg.rng_seed), grid, values, cfg)
}

/// [`fit_to_field`] starting from `theta` instead of the seeded initialization.
pub fn fit_to_field_from(
    arch: &ArchSpec,
    theta: ParamVector,
    grid: &CollocationSet,
    values: &[f64],
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if grid.dim() != arch.input_dim || cfg.n_points.len() != grid.dim() {
        return Err(structure("field grid, network and n_points disagree on the dimension"));
    }
    let full = FitTargets::from_grid_field(grid.clone(), values.to_vec())?;
    let stride = grid.shape()[0] / cfg.n_points[0];
    let uniform = stride >= 1 && grid.shape().iter().zip(&cfg.n_points).all(|(&g, &c)| g == c * stride);
    let targets = if uniform && stride > 1 {
        let pts = grid.subsample(stride)?;
        let keep = subsample_indices(grid.shape(), stride);
        let n = grid.len();
        let vals = keep.iter().map(|&m| values[m]).collect();
        let grads = (0..grid.dim()).flat_map(|i| keep.iter().map(move |&m| i * n + m)).map(|k| full.grads[k]).collect();
        FitTargets::new(pts, vals, grads)?
    } else {
        full.clone()
    };
    let held = HeldOut { points: grid.clone(), values: values.to_vec() };
    fit_targets_from(arch, theta, &targets, &held, cfg)
}

fn subsample_indices(shape: &[usize], stride: usize) -> Vec<usize> {
    let n: usize = shape.iter().product();
    (0..n)
        .filter(|&m| {
            let mut rem = m;
            shape.iter().rev().all(|&c| {
                let i = rem % c;
                rem /= c;
                i % stride == 0
            })
        })
        .collect()
}

/// Minimizes the Sobolev loss on `targets` from the seeded initialization.
pub fn fit_targets(arch: &ArchSpec, targets: &FitTargets, held: &HeldOut, cfg: &FitConfig) -> Result<FitResult> {
    fit_targets_from(arch, ParamVector::init(arch, cfg.rng_seed), targets, held, cfg)
}

pub fn fit_targets_from(
    arch: &ArchSpec,
    mut theta: ParamVector,
    targets: &FitTargets,
    held: &HeldOut,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    arch.validate()?;
    arch.check_theta(theta.values())?;
    let mut best = theta.values().to_vec();
    let mut best_loss = sobolev_loss(arch, &best, targets, cfg.deriv_weight)?;
    let mut best_err = held.rel_error(arch, &best)?;
    let mut history = vec![best_loss];

    let gn = levenberg_marquardt(arch, theta.values_mut(), targets, held, cfg, &mut history)?;
    let loss = sobolev_loss(arch, theta.values(), targets, cfg.deriv_weight)?;
    if loss <= best_loss {
        best_loss = loss;
        best.copy_from_slice(theta.values());
        best_err = held.rel_error(arch, &best)?;
    }

    let mut adam_iters = 0;
    if best_err > cfg.target_tolerance && cfg.iterations > 0 {
        let mut x = best.clone();
        let p = x.len();
        let (mut m1, mut m2) = (vec![0.0; p], vec![0.0; p]);
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        for it in 0..cfg.iterations {
            let (loss, g) = sobolev_loss_grad(arch, &x, targets, cfg.deriv_weight)?;
            if !loss.is_finite() {
                break;
            }
            if loss < best_loss {
                best_loss = loss;
                best.copy_from_slice(&x);
            }
            let lr = cfg.learning_rate_at(it);
            let t = (it + 1) as i32;
            let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
            for k in 0..p {
                m1[k] = b1 * m1[k] + (1.0 - b1) * g[k];
                m2[k] = b2 * m2[k] + (1.0 - b2) * g[k] * g[k];
                x[k] -= lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
            }
            adam_iters = it + 1;
            if adam_iters % cfg.check_every == 0 {
                history.push(best_loss);
                best_err = held.rel_error(arch, &best)?;
                if best_err <= cfg.target_tolerance {
                    break;
                }
            }
        }
        let final_loss = sobolev_loss(arch, &x, targets, cfg.deriv_weight)?;
        if final_loss < best_loss {
            best_loss = final_loss;
            best.copy_from_slice(&x);
        }
        best_err = held.rel_error(arch, &best)?;
    }

    let theta = ParamVector::new(arch.layout(), best)?;
    Ok(FitResult {
        theta,
        rel_error: best_err,
        loss: best_loss,
        converged: best_err <= cfg.target_tolerance,
        gauss_newton_iterations: gn,
        adam_iterations: adam_iters,
        loss_history: history,
    })
}

/// Residual vector whose squared norm is the Sobolev loss, and its Jacobian.
fn residual_system(arch: &ArchSpec, theta: &[f64], t: &FitTargets, w: f64) -> Result<(Vec<f64>, Mat<f64>)> {
    let eval = BatchEval::new(arch, theta, &t.points, DerivOrder::First)?;
    let (_, rv, rg) = loss_parts(&eval, t, w);
    let n = rv.len();
    let d = t.points.dim();
    let sv = 1.0 / (n as f64).sqrt();
    let sg = (w / n as f64).sqrt();
    let p = arch.num_params();
    let rows = if w > 0.0 { n * (1 + d) } else { n };
    let mut r = Vec::with_capacity(rows);
    r.extend(rv.iter().map(|x| x * sv));
    let mut jac = Mat::<f64>::zeros(rows, p);
    let jv = eval.jacobian();
    jac.as_mut().submatrix_mut(0, 0, n, p).copy_from(&jv * faer::Scale(sv));
    if w > 0.0 {
        r.extend(rg.iter().map(|x| x * sg));
        for i in 0..d {
            let jd = eval.derivative_jacobian(i);
            jac.as_mut().submatrix_mut((1 + i) * n, 0, n, p).copy_from(&jd * faer::Scale(sg));
        }
    }
    Ok((r, jac))
}

/// Returns the number of iterations performed; `theta` holds the best state.
fn levenberg_marquardt(
    arch: &ArchSpec,
    theta: &mut [f64],
    targets: &FitTargets,
    held: &HeldOut,
    cfg: &FitConfig,
    history: &mut Vec<f64>,
) -> Result<usize> {
    let w = cfg.deriv_weight;
    let p = theta.len();
    let mut mu = f64::NAN;
    let mut iters = 0;
    let (mut r, mut jac) = residual_system(arch, theta, targets, w)?;
    let mut loss: f64 = r.iter().map(|x| x * x).sum();
    while iters < cfg.gauss_newton_iterations {
        iters += 1;
        let m = r.len();
        let dual = m <= p;
        let dim = if dual { m } else { p };
        let mut gram = Mat::<f64>::zeros(dim, dim);
        if dual {
            matmul(gram.as_mut(), Accum::Replace, jac.as_ref(), jac.transpose(), 1.0, Par::Seq);
        } else {
            matmul(gram.as_mut(), Accum::Replace, jac.transpose(), jac.as_ref(), 1.0, Par::Seq);
        }
        let max_diag = (0..dim).map(|k| gram[(k, k)]).fold(0.0f64, f64::max);
        if max_diag == 0.0 {
            break;
        }
        if mu.is_nan() {
            mu = 1e-3 * max_diag;
        }
        let rcol = faer::Col::<f64>::from_fn(m, |i| r[i]);
        let jtr = if dual { None } else { Some(jac.transpose() * &rcol) };
        let mut accepted = false;
        for _ in 0..12 {
            let mut a = gram.clone();
            for k in 0..dim {
                a[(k, k)] += mu;
            }
            let Ok(chol) = a.llt(Side::Lower) else {
                mu *= 10.0;
                continue;
            };
            let step: Vec<f64> = if dual {
                let y = chol.solve(&rcol);
                (jac.transpose() * &y).iter().map(|v| -v).collect()
            } else {
                chol.solve(jtr.as_ref().expect("primal form")).iter().map(|v| -v).collect()
            };
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(a, b)| a + b).collect();
            let (rt, jt) = residual_system(arch, &trial, targets, w)?;
            let lt: f64 = rt.iter().map(|x| x * x).sum();
            if lt.is_finite() && lt < loss {
                theta.copy_from_slice(&trial);
                r = rt;
                jac = jt;
                loss = lt;
                mu = (mu / 3.0).max(1e-14 * max_diag);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        history.push(loss);
        if !accepted {
            break;
        }
        if iters % 5 == 0 && held.rel_error(arch, theta)? <= cfg.target_tolerance {
            break;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numerical("Gauss-Newton fit produced a non-finite loss".into()));
    }
    Ok(iters)
}
