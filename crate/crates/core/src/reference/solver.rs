//! Method-of-lines reference solver: fourth-order periodic central differences
//! in space, classical RK4 in time.

use serde::{Deserialize, Serialize};

use crate::error::{structure, validation, Error, Result};
use crate::pde::{CollocationSet, GridScheme, PdeProblem, ProblemKind};

/// Snapshots of a grid solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub problem: PdeProblem,
    pub grid_shape: Vec<usize>,
    pub times: Vec<f64>,
    /// One vector per time, in grid order.
    pub values: Vec<Vec<f64>>,
    pub dt: f64,
    pub method: String,
}

impl ReferenceSolution {
    pub fn grid(&self) -> Result<CollocationSet> {
        self.problem.make_grid(&self.grid_shape)
    }

    /// Index of the snapshot at time `t`, if any.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    pub fn at(&self, t: f64) -> Option<&[f64]> {
        self.time_index(t).map(|k| self.values[k].as_slice())
    }

    /// Restriction to every `stride`-th grid node along each dimension.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        let grid = self.grid()?;
        let coarse = grid.subsample(stride)?;
        let shape = self.grid_shape.clone();
        let keep: Vec<usize> = (0..grid.len())
            .filter(|&m| {
                let mut rem = m;
                shape.iter().rev().all(|&c| {
                    let i = rem % c;
                    rem /= c;
                    i % stride == 0
                })
            })
            .collect();
        debug_assert_eq!(keep.len(), coarse.len());
        Ok(Self {
            grid_shape: coarse.shape().to_vec(),
            values: self.values.iter().map(|v| keep.iter().map(|&m| v[m]).collect()).collect(),
            ..self.clone()
        })
    }
}

/// Largest stable time step the solver accepts for `problem` on `grid`.
pub fn max_stable_dt(problem: &PdeProblem, grid: &CollocationSet, u0: &[f64]) -> f64 {
    let h = grid.spacing();
    let mut dt = f64::INFINITY;
    match problem.kind {
        ProblemKind::AllenCahn | ProblemKind::Burgers => {
            if problem.epsilon > 0.0 {
                dt = dt.min(0.4 * h[0] * h[0] / problem.epsilon);
            }
            if problem.kind == ProblemKind::Burgers {
                let umax = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if umax > 0.0 {
                    dt = dt.min(0.5 * h[0] / umax);
                }
            }
        }
        ProblemKind::Vlasov => {
            let vmax = problem.domain[1].lo.abs().max(problem.domain[1].hi.abs());
            dt = dt.min(0.5 * h[0] / vmax);
            if problem.field_amplitude != 0.0 {
                dt = dt.min(0.5 * h[1] / problem.field_amplitude.abs());
            }
        }
    }
    dt
}

/// Solves from the problem's initial condition; see [`solve_reference_from`].
pub fn solve_reference(
    problem: &PdeProblem,
    grid_n: &[usize],
    dt_max: f64,
    output_times: &[f64],
) -> Result<ReferenceSolution> {
    let grid = problem.make_grid(grid_n)?;
    let u0: Vec<f64> = grid.iter().map(|x| problem.initial_condition(x)).collect();
    solve_reference_from(problem, &grid, u0, dt_max, output_times)
}

/// Integrates from `u0` on an equidistant grid and returns snapshots at the
/// nondecreasing `output_times` (starting at or after zero). Each interval
/// between outputs is split into equal steps no longer than `dt_max`.
pub fn solve_reference_from(
    problem: &PdeProblem,
    grid: &CollocationSet,
    u0: Vec<f64>,
    dt_max: f64,
    output_times: &[f64],
) -> Result<ReferenceSolution> {
    problem.validate()?;
    if grid.scheme() != GridScheme::EquidistantGrid || grid.dim() != problem.spatial_dim() {
        return Err(structure("reference solver needs an equidistant grid over the problem domain"));
    }
    if grid.shape().iter().any(|&c| c < 32) {
        return Err(validation("reference grids need at least 32 nodes per dimension"));
    }
    if u0.len() != grid.len() {
        return Err(structure("initial field does not match the grid"));
    }
    if output_times.windows(2).any(|w| w[1] < w[0]) || output_times.first().is_some_and(|&t| t < 0.0) {
        return Err(validation("output times must be nonnegative and sorted"));
    }
    let limit = max_stable_dt(problem, grid, &u0);
    if !(dt_max > 0.0) || dt_max > limit {
        return Err(validation(format!("dt = {dt_max:e} violates the stability guard {limit:e}")));
    }

    let op = Operator::new(problem, grid);
    let mut rk = Rk4Buffers::new(u0.len());
    let mut u = u0;
    let mut t = 0.0;
    let mut values = Vec::with_capacity(output_times.len());
    let mut total_steps = 0usize;
    for &target in output_times {
        let span = target - t;
        let steps = (span / dt_max * (1.0 - 1e-12)).ceil().max(0.0) as usize;
        if steps > 0 {
            let dt = span / steps as f64;
            for _ in 0..steps {
                rk.step(&op, &mut u, dt);
                total_steps += 1;
            }
            if let Some(bad) = u.iter().find(|v| !v.is_finite() || v.abs() > 1e6) {
                return Err(Error::Divergence { step: total_steps, reason: format!("grid value {bad}"), partial: None });
            }
        }
        t = target;
        values.push(u.clone());
    }
    Ok(ReferenceSolution {
        problem: problem.clone(),
        grid_shape: grid.shape().to_vec(),
        times: output_times.to_vec(),
        values,
        dt: dt_max,
        method: "fd4-rk4".to_string(),
    })
}

/// Discrete right-hand side on a periodic grid.
struct Operator<'a> {
    problem: &'a PdeProblem,
    shape: Vec<usize>,
    h: Vec<f64>,
    /// Vlasov: velocity of each v-node and `-A sin(x)` of each x-node.
    v: Vec<f64>,
    force: Vec<f64>,
}

impl<'a> Operator<'a> {
    fn new(problem: &'a PdeProblem, grid: &CollocationSet) -> Self {
        let shape = grid.shape().to_vec();
        let h = grid.spacing().to_vec();
        let (mut v, mut force) = (vec![], vec![]);
        if problem.kind == ProblemKind::Vlasov {
            let o = grid.origin();
            v = (0..shape[1]).map(|j| o[1] + j as f64 * h[1]).collect();
            force = (0..shape[0]).map(|i| -problem.field_amplitude * (o[0] + i as f64 * h[0]).sin()).collect();
        }
        Self { problem, shape, h, v, force }
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let p = self.problem;
        match p.kind {
            ProblemKind::AllenCahn => {
                let n = u.len();
                let c = p.epsilon / (12.0 * self.h[0] * self.h[0]);
                for i in 0..n {
                    let lap = c * second_diff(u, i, n, 1, 0);
                    let r = match p.reaction {
                        crate::pde::Reaction::Cubic => u[i] - u[i] * u[i] * u[i],
                        crate::pde::Reaction::Linear => u[i],
                        crate::pde::Reaction::Off => 0.0,
                    };
                    out[i] = lap + r;
                }
            }
            ProblemKind::Burgers => {
                // Skew-symmetric split of u u_x = (u u_x + (u^2)_x) / 3, which
                // conserves discrete energy for central differences.
                let n = u.len();
                let c2 = p.epsilon / (12.0 * self.h[0] * self.h[0]);
                let c1 = 1.0 / (12.0 * self.h[0]);
                for i in 0..n {
                    let ux = c1 * first_diff(u, i, n, 1, 0, |x| x);
                    let u2x = c1 * first_diff(u, i, n, 1, 0, |x| x * x);
                    out[i] = c2 * second_diff(u, i, n, 1, 0) - (u[i] * ux + u2x) / 3.0;
                }
            }
            ProblemKind::Vlasov => {
                let (nx, nv) = (self.shape[0], self.shape[1]);
                let cx = 1.0 / (12.0 * self.h[0]);
                let cv = 1.0 / (12.0 * self.h[1]);
                for i in 0..nx {
                    let row = i * nv;
                    for j in 0..nv {
                        let ux = cx * first_diff(u, i, nx, nv, j, |x| x);
                        let uv = cv * first_diff(&u[row..row + nv], j, nv, 1, 0, |x| x);
                        out[row + j] = -self.v[j] * ux + self.force[i] * uv;
                    }
                }
            }
        }
    }
}

/// `12 h` times the fourth-order first difference of `g(u)` along an axis of
/// length `n` with stride `stride`, at index `i` (plus `offset`).
#[inline]
fn first_diff(u: &[f64], i: usize, n: usize, stride: usize, offset: usize, g: impl Fn(f64) -> f64) -> f64 {
    let at = |k: usize| g(u[k * stride + offset]);
    let (m2, m1, p1, p2) = ((i + n - 2) % n, (i + n - 1) % n, (i + 1) % n, (i + 2) % n);
    -at(p2) + 8.0 * at(p1) - 8.0 * at(m1) + at(m2)
}

/// `12 h^2` times the fourth-order second difference.
#[inline]
fn second_diff(u: &[f64], i: usize, n: usize, stride: usize, offset: usize) -> f64 {
    let at = |k: usize| u[k * stride + offset];
    let (m2, m1, p1, p2) = ((i + n - 2) % n, (i + n - 1) % n, (i + 1) % n, (i + 2) % n);
    -at(p2) + 16.0 * at(p1) - 30.0 * at(i) + 16.0 * at(m1) - at(m2)
}

struct Rk4Buffers {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Buffers {
    fn new(n: usize) -> Self {
        Self { k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]], tmp: vec![0.0; n] }
    }

    fn step(&mut self, op: &Operator<'_>, u: &mut [f64], dt: f64) {
        let [k1, k2, k3, k4] = &mut self.k;
        op.apply(u, k1);
        for (t, (a, b)) in self.tmp.iter_mut().zip(u.iter().zip(k1.iter())) {
            *t = a + 0.5 * dt * b;
        }
        op.apply(&self.tmp, k2);
        for (t, (a, b)) in self.tmp.iter_mut().zip(u.iter().zip(k2.iter())) {
            *t = a + 0.5 * dt * b;
        }
        op.apply(&self.tmp, k3);
        for (t, (a, b)) in self.tmp.iter_mut().zip(u.iter().zip(k3.iter())) {
            *t = a + dt * b;
        }
        op.apply(&self.tmp, k4);
        for i in 0..u.len() {
            u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::Reaction;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn heat_mode_matches_exponential_decay() {
        let mut p = PdeProblem::allen_cahn();
        p.reaction = Reaction::Off;
        let grid = p.make_grid(&[1024]).unwrap();
        let u0: Vec<f64> = grid.iter().map(|x| x[0].sin()).collect();
        let sol = solve_reference_from(&p, &grid, u0, 1e-4, &[1.0]).unwrap();
        let exact: Vec<f64> = grid.iter().map(|x| (-p.epsilon).exp() * x[0].sin()).collect();
        assert!(rel_err(&sol.values[0], &exact) < 1e-6);
    }

    #[test]
    fn free_streaming_matches_transport() {
        let mut p = PdeProblem::vlasov();
        p.field_amplitude = 0.0;
        let g = |x: f64| 1.0 + 0.5 * x.cos();
        let h = |v: f64| (-0.5 * v * v).exp();
        let grid = p.make_grid(&[256, 128]).unwrap();
        let u0: Vec<f64> = grid.iter().map(|x| g(x[0]) * h(x[1])).collect();
        let sol = solve_reference_from(&p, &grid, u0, 2e-3, &[1.0]).unwrap();
        let exact: Vec<f64> = grid.iter().map(|x| g(x[0] - x[1]) * h(x[1])).collect();
        assert!(rel_err(&sol.values[0], &exact) < 1e-3);
    }

    #[test]
    fn stability_guard_rejects_large_steps() {
        let p = PdeProblem::allen_cahn();
        assert!(matches!(solve_reference(&p, &[2048], 1e-2, &[0.1]), Err(Error::Validation(_))));
        assert!(matches!(solve_reference(&p, &[16], 1e-4, &[0.1]), Err(Error::Validation(_))));
    }

    #[test]
    fn snapshots_at_requested_times() {
        let p = PdeProblem::burgers();
        let sol = solve_reference(&p, &[256], 1e-3, &[0.0, 0.05, 0.1]).unwrap();
        assert_eq!(sol.values.len(), 3);
        let grid = sol.grid().unwrap();
        let u0: Vec<f64> = grid.iter().map(|x| p.initial_condition(x)).collect();
        assert_eq!(sol.values[0], u0);
        assert_eq!(sol.time_index(0.1), Some(2));
        let coarse = sol.subsample(4).unwrap();
        assert_eq!(coarse.grid_shape, vec![64]);
        assert_eq!(coarse.values[2][1], sol.values[2][4]);
    }

    #[test]
    fn vlasov_subsample_keeps_tensor_nodes() {
        let mut p = PdeProblem::vlasov();
        p.field_amplitude = 0.0;
        let grid = p.make_grid(&[64, 32]).unwrap();
        let u0: Vec<f64> = (0..grid.len()).map(|m| m as f64).collect();
        let sol = solve_reference_from(&p, &grid, u0, 5e-3, &[0.0]).unwrap();
        let c = sol.subsample(2).unwrap();
        // Node (1, 3) of the 32x16 grid is node (2, 6) of the fine grid.
        assert_eq!(c.values[0][16 + 3], (2 * 32 + 6) as f64);
    }
}
