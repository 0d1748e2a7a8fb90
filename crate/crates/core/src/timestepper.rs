//! Explicit time integration of the parameter ODE with sketched least-squares updates.
//!
//! Each step draws a sketch `S` of parameter indices, assembles the restricted
//! Jacobian `J_S(theta)` and the right-hand side `f(theta)` on the collocation
//! points, solves `min ||J_S x - f||` and advances only the sketched entries.
//! The dense scheme is the special case `s = p`.

use std::time::Instant;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{structure, validation, Error, Result};
use crate::linalg::{lstsq, norm};
use crate::network::{ArchSpec, BatchEval};
use crate::pde::{steps_for, CollocationSet, PdeProblem};
use crate::sketch::{draw_sketch_with, SamplingMode, Sketch};

/// Sketched linear system at one parameter state.
#[derive(Clone, Debug)]
pub struct GalerkinSystem {
    /// `n x s`
    pub jacobian: Mat<f64>,
    /// Length `n`.
    pub rhs: Vec<f64>,
}

/// Anything with a parameter Jacobian and a right-hand side on a fixed set of
/// collocation points.
pub trait GalerkinModel {
    fn num_params(&self) -> usize;
    fn num_points(&self) -> usize;
    fn assemble(&self, theta: &[f64], sketch: &Sketch) -> Result<GalerkinSystem>;
}

/// Neural network surrogate of a PDE solution on a collocation set.
#[derive(Clone, Copy, Debug)]
pub struct NeuralGalerkin<'a> {
    pub arch: &'a ArchSpec,
    pub problem: &'a PdeProblem,
    pub points: &'a CollocationSet,
}

impl<'a> NeuralGalerkin<'a> {
    pub fn new(arch: &'a ArchSpec, problem: &'a PdeProblem, points: &'a CollocationSet) -> Result<Self> {
        arch.validate()?;
        problem.validate()?;
        if arch.input_dim != problem.spatial_dim() || points.dim() != problem.spatial_dim() {
            return Err(structure("network, problem and collocation points disagree on the dimension"));
        }
        Ok(Self { arch, problem, points })
    }
}

impl GalerkinModel for NeuralGalerkin<'_> {
    fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    fn num_points(&self) -> usize {
        self.points.len()
    }

    fn assemble(&self, theta: &[f64], sketch: &Sketch) -> Result<GalerkinSystem> {
        if sketch.num_params() != self.arch.num_params() {
            return Err(structure("sketch was drawn for a different parameter count"));
        }
        let eval = BatchEval::new(self.arch, theta, self.points, self.problem.required_order())?;
        let rhs = self.problem.rhs_batch(&eval, self.points)?;
        let jacobian =
            if sketch.is_dense() { eval.jacobian() } else { eval.jacobian_columns(sketch.indices()) };
        Ok(GalerkinSystem { jacobian, rhs })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    #[default]
    Rk4,
}

impl Scheme {
    pub fn stages(self) -> usize {
        match self {
            Scheme::Euler => 1,
            Scheme::Rk4 => 4,
        }
    }
}

/// When sketches are redrawn within a multi-stage step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchRefresh {
    /// One sketch per step, shared by all stages.
    #[default]
    PerStep,
    PerStage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub end_time: f64,
    /// Number of parameters updated per step; `None` means dense.
    #[serde(default)]
    pub sketch_size: Option<usize>,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default)]
    pub refresh: SketchRefresh,
    pub rcond: f64,
    pub seed: u64,
    /// Keep a parameter snapshot every this many steps (the final state is always kept).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub record_sketches: bool,
    #[serde(default = "default_divergence_bound")]
    pub divergence_bound: f64,
}

fn default_record_every() -> usize {
    1
}

fn default_divergence_bound() -> f64 {
    1e6
}

impl IntegratorConfig {
    pub fn new(scheme: Scheme, dt: f64, end_time: f64, sketch_size: Option<usize>, rcond: f64, seed: u64) -> Self {
        Self {
            scheme,
            dt,
            end_time,
            sketch_size,
            sampling: SamplingMode::WithoutReplacement,
            refresh: SketchRefresh::PerStep,
            rcond,
            seed,
            record_every: 1,
            record_sketches: false,
            divergence_bound: default_divergence_bound(),
        }
    }

    pub fn num_steps(&self) -> Result<usize> {
        steps_for(self.end_time, self.dt)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        self.num_steps()?;
        if let Some(s) = self.sketch_size {
            if s == 0 || s > p {
                return Err(validation(format!("sketch size {s} must lie in [1, {p}]")));
            }
        }
        if !(0.0..1.0).contains(&self.rcond) {
            return Err(validation("rcond must lie in [0, 1)"));
        }
        if self.record_every == 0 {
            return Err(validation("record_every must be positive"));
        }
        Ok(())
    }

    fn sketch(&self, p: usize, step: usize, stage: usize) -> Result<Sketch> {
        let s = self.sketch_size.unwrap_or(p);
        if s == p && self.sampling == SamplingMode::WithoutReplacement {
            return Ok(Sketch::dense(p));
        }
        let stream = match self.refresh {
            SketchRefresh::PerStep => step as u64,
            SketchRefresh::PerStage => 4 * step as u64 + stage as u64,
        };
        draw_sketch_with(p, s, self.seed, stream, self.sampling)
    }
}

/// Outcome of one sketched least-squares solve.
#[derive(Clone, Debug)]
pub struct StageSolve {
    /// Lifted update direction, length `p`.
    pub direction: Vec<f64>,
    pub residual_abs: f64,
    /// Residual divided by `||f||` (zero when `f` vanishes).
    pub residual_rel: f64,
}

pub fn solve_stage(model: &dyn GalerkinModel, theta: &[f64], sketch: &Sketch, rcond: f64) -> Result<StageSolve> {
    let sys = model.assemble(theta, sketch)?;
    if !sys.rhs.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite right-hand side".into()));
    }
    let sol = lstsq(sys.jacobian.as_ref(), &sys.rhs, rcond)?;
    let fnorm = norm(&sys.rhs);
    Ok(StageSolve {
        direction: sketch.lift(&sol.x)?,
        residual_abs: sol.residual_norm,
        residual_rel: if fnorm > 0.0 { sol.residual_norm / fnorm } else { 0.0 },
    })
}

fn axpy(theta: &[f64], a: f64, dir: &[f64]) -> Vec<f64> {
    theta.iter().zip(dir).map(|(t, d)| t + a * d).collect()
}

/// One explicit Euler step. Returns the new state and the stage solve.
pub fn euler_step(
    model: &dyn GalerkinModel,
    theta: &[f64],
    dt: f64,
    sketch: &Sketch,
    rcond: f64,
) -> Result<(Vec<f64>, StageSolve)> {
    let st = solve_stage(model, theta, sketch, rcond)?;
    Ok((axpy(theta, dt, &st.direction), st))
}

/// One classical RK4 step with one sketch per stage (pass the same sketch
/// four times to share it). Returns the new state and the first-stage solve.
pub fn rk4_step(
    model: &dyn GalerkinModel,
    theta: &[f64],
    dt: f64,
    sketches: [&Sketch; 4],
    rcond: f64,
) -> Result<(Vec<f64>, StageSolve)> {
    let k1 = solve_stage(model, theta, sketches[0], rcond)?;
    let k2 = solve_stage(model, &axpy(theta, 0.5 * dt, &k1.direction), sketches[1], rcond)?;
    let k3 = solve_stage(model, &axpy(theta, 0.5 * dt, &k2.direction), sketches[2], rcond)?;
    let k4 = solve_stage(model, &axpy(theta, dt, &k3.direction), sketches[3], rcond)?;
    let next = (0..theta.len())
        .map(|i| {
            theta[i]
                + dt / 6.0 * (k1.direction[i] + 2.0 * k2.direction[i] + 2.0 * k3.direction[i] + k4.direction[i])
        })
        .collect();
    Ok((next, k1))
}

/// State needed to resume an integration exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub theta: Vec<f64>,
    /// Number of completed steps.
    pub step: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Time of every completed step (`k * dt`, starting at the first step).
    pub step_times: Vec<f64>,
    /// Least-squares residual of the (first-stage) solve at each step.
    pub residual_abs: Vec<f64>,
    pub residual_rel: Vec<f64>,
    /// Wall-clock seconds spent per step.
    pub wall_times: Vec<f64>,
    /// Times of the kept snapshots, including the initial state.
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    /// Sketches of every stage solve when requested.
    pub sketches: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

impl TrajectoryRecord {
    pub fn final_theta(&self) -> Option<&[f64]> {
        self.snapshots.last().map(Vec::as_slice)
    }

    pub fn total_wall_time(&self) -> f64 {
        self.wall_times.iter().sum()
    }

    pub fn checkpoint(&self, seed: u64) -> Option<Checkpoint> {
        Some(Checkpoint { theta: self.final_theta()?.to_vec(), step: self.step_times.len(), seed })
    }
}

pub fn integrate(model: &dyn GalerkinModel, theta0: &[f64], cfg: &IntegratorConfig) -> Result<TrajectoryRecord> {
    integrate_from(model, &Checkpoint { theta: theta0.to_vec(), step: 0, seed: cfg.seed }, cfg, |_, _| {})
}

/// Continues from a checkpoint up to `cfg.end_time`; `on_step(k, theta)` runs
/// after every completed step `k` (1-based).
pub fn integrate_from(
    model: &dyn GalerkinModel,
    start: &Checkpoint,
    cfg: &IntegratorConfig,
    mut on_step: impl FnMut(usize, &[f64]),
) -> Result<TrajectoryRecord> {
    let p = model.num_params();
    cfg.validate(p)?;
    if start.theta.len() != p {
        return Err(structure(format!("initial state has length {} for {p} parameters", start.theta.len())));
    }
    if start.seed != cfg.seed {
        return Err(validation("checkpoint seed differs from the configured seed"));
    }
    let steps = cfg.num_steps()?;
    if start.step > steps {
        return Err(validation("checkpoint lies beyond the end time"));
    }
    let mut rec = TrajectoryRecord::default();
    let s = cfg.sketch_size.unwrap_or(p);
    if model.num_points() < 10 * s {
        rec.warnings.push(format!(
            "{} collocation points for sketch size {s}; at least {} recommended",
            model.num_points(),
            10 * s
        ));
    }
    let mut theta = start.theta.clone();
    rec.times.push(start.step as f64 * cfg.dt);
    rec.snapshots.push(theta.clone());

    for k in start.step..steps {
        let clock = Instant::now();
        let (next, first) = match cfg.scheme {
            Scheme::Euler => {
                let sk = cfg.sketch(p, k, 0)?;
                if cfg.record_sketches {
                    rec.sketches.push(sk.indices().to_vec());
                }
                euler_step(model, &theta, cfg.dt, &sk, cfg.rcond)?
            }
            Scheme::Rk4 => {
                let sk: Vec<Sketch> = match cfg.refresh {
                    SketchRefresh::PerStep => vec![cfg.sketch(p, k, 0)?],
                    SketchRefresh::PerStage => (0..4).map(|st| cfg.sketch(p, k, st)).collect::<Result<_>>()?,
                };
                let pick = |st: usize| &sk[st.min(sk.len() - 1)];
                if cfg.record_sketches {
                    rec.sketches.extend((0..4).map(|st| pick(st).indices().to_vec()));
                }
                rk4_step(model, &theta, cfg.dt, [pick(0), pick(1), pick(2), pick(3)], cfg.rcond)?
            }
        };
        theta = next;
        let step = k + 1;
        let bad = theta.iter().find(|v| !v.is_finite()).map(|v| format!("parameter became {v}"));
        let big = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(reason) = bad.or_else(|| (big > cfg.divergence_bound).then(|| format!("max |theta| = {big:.3e}"))) {
            return Err(Error::Divergence { step, reason, partial: Some(Box::new(rec)) });
        }
        rec.wall_times.push(clock.elapsed().as_secs_f64());
        rec.step_times.push(step as f64 * cfg.dt);
        rec.residual_abs.push(first.residual_abs);
        rec.residual_rel.push(first.residual_rel);
        if step % cfg.record_every == 0 || step == steps {
            rec.times.push(step as f64 * cfg.dt);
            rec.snapshots.push(theta.clone());
        }
        on_step(step, &theta);
    }
    Ok(rec)
}
