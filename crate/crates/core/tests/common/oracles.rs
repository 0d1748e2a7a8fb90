//! Independent oracles shared by the property tests and the acceptance suite.
//! Each check returns the measured quantity; callers compare to thresholds.
#![allow(dead_code)]

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsng::linalg::lstsq;
use rsng::network::{forward, param_gradient, spatial_derivs, Activation, ArchSpec, ParamVector};
use rsng::pde::{PdeProblem, Reaction};
use rsng::reference::solve_reference_from;
use rsng::sketch::{draw_sketch, Sketch};
use rsng::timestepper::{euler_step, integrate, GalerkinModel, GalerkinSystem, IntegratorConfig, NeuralGalerkin, Scheme};

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[derive(Debug, Default)]
pub struct GradientErrors {
    pub first: f64,
    pub second: f64,
    pub param: f64,
}

/// Worst relative deviation from central differences over `cases` random
/// (architecture, theta, x) draws.
pub fn gradient_oracle(cases: u64) -> GradientErrors {
    let mut worst = GradientErrors::default();
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let d = 1 + (case % 2) as usize;
        let act = if case % 3 == 0 { Activation::Tanh } else { Activation::Rational32 };
        let periods: Vec<f64> = (0..d).map(|_| rng.random_range(1.0..7.0)).collect();
        let arch = ArchSpec::new(periods, rng.random_range(2..6), rng.random_range(1..4), act);
        let theta = ParamVector::init(&arch, case);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b = spatial_derivs(&arch, &theta, &x).unwrap();
        let f = |y: &[f64]| forward(&arch, &theta, y).unwrap();
        for i in 0..d {
            let shift = |h: f64| {
                let mut y = x.clone();
                y[i] += h;
                f(&y)
            };
            let h1 = 1e-5;
            let fd1 = (shift(h1) - shift(-h1)) / (2.0 * h1);
            let h2 = 1e-4;
            let fd2 = (shift(h2) - 2.0 * f(&x) + shift(-h2)) / (h2 * h2);
            worst.first = worst.first.max(rel(fd1, b.grad_x[i]));
            worst.second = worst.second.max(rel(fd2, b.hess_diag[i]));
        }
        let g = param_gradient(&arch, &theta, &x, None).unwrap();
        let mut th = theta.values().to_vec();
        for k in 0..arch.num_params() {
            let h = 1e-6 * th[k].abs().max(1.0);
            let orig = th[k];
            th[k] = orig + h;
            let up = forward(&arch, &ParamVector::new(arch.layout(), th.clone()).unwrap(), &x).unwrap();
            th[k] = orig - h;
            let dn = forward(&arch, &ParamVector::new(arch.layout(), th.clone()).unwrap(), &x).unwrap();
            th[k] = orig;
            worst.param = worst.param.max(rel((up - dn) / (2.0 * h), g[k]));
        }
    }
    worst
}

/// Cholesky solve of the normal equations, written out by hand.
pub fn normal_equations(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
    let (n, s) = (a.nrows(), a.ncols());
    let mut g = vec![vec![0.0; s]; s];
    let mut rhs = vec![0.0; s];
    for i in 0..s {
        for j in 0..s {
            g[i][j] = (0..n).map(|m| a[(m, i)] * a[(m, j)]).sum();
        }
        rhs[i] = (0..n).map(|m| a[(m, i)] * b[m]).sum();
    }
    let mut l = vec![vec![0.0; s]; s];
    for i in 0..s {
        for j in 0..=i {
            let sum: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (g[i][i] - sum).sqrt();
            } else {
                l[i][j] = (g[i][j] - sum) / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; s];
    for i in 0..s {
        y[i] = (rhs[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; s];
    for i in (0..s).rev() {
        x[i] = (y[i] - (i + 1..s).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, s: usize) -> Mat<f64> {
    Mat::from_fn(n, s, |_, _| rng.random_range(-1.0..1.0))
}

/// Worst relative deviation of `lstsq` from the normal-equations solution.
pub fn lstsq_vs_normal_equations(systems: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..systems {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let s = rng.random_range(2..12);
        let n = s + rng.random_range(5..45);
        let a = random_matrix(&mut rng, n, s);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = normal_equations(&a, &b);
        let got = lstsq(a.as_ref(), &b, 1e-12).unwrap().x;
        worst = worst.max(rel_l2(&got, &want));
    }
    worst
}

/// Columns of a random orthonormal `n x k` matrix (Gram-Schmidt, twice).
pub fn orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for u in &q {
                let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
            }
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        q.push(v);
    }
    q
}

pub struct Constructed {
    pub a: Mat<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
}

/// `A = U diag(sigma) V^T` with exactly known factors; trailing entries of
/// `sigma` may be zero or tiny.
pub fn constructed(rng: &mut ChaCha8Rng, n: usize, s: usize, sigma: Vec<f64>) -> Constructed {
    let k = sigma.len().min(s).min(n);
    let u = orthonormal(rng, n, k);
    let v = orthonormal(rng, s, s);
    let a = Mat::from_fn(n, s, |i, j| (0..k).map(|r| u[r][i] * sigma[r] * v[r][j]).sum());
    Constructed { a, u, v, sigma }
}

/// Worst distance of `lstsq` from `V_r Sigma_r^{-1} U_r^T b` on rank-deficient
/// systems, relative to the exact solution's norm.
pub fn minimum_norm_cases(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + case);
        let s = rng.random_range(3..10);
        let n = s + rng.random_range(0..20);
        let rank = rng.random_range(1..s);
        let sigma: Vec<f64> = (0..rank).map(|_| rng.random_range(0.5..3.0)).collect();
        let c = constructed(&mut rng, n, s, sigma);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut want = vec![0.0; s];
        for r in 0..rank {
            let ub: f64 = c.u[r].iter().zip(&b).map(|(x, y)| x * y).sum();
            want.iter_mut().zip(&c.v[r]).for_each(|(w, vj)| *w += ub / c.sigma[r] * vj);
        }
        let got = lstsq(c.a.as_ref(), &b, 1e-8).unwrap();
        worst = worst.max(rel_l2(&got.x, &want));
        assert_eq!(got.rank, rank);
    }
    worst
}

/// `u(x; theta) = sum_k theta_k phi_k(x)` with `f = lambda u`.
pub struct LinearModel {
    pub basis: Mat<f64>,
    pub lambda: f64,
}

impl LinearModel {
    pub fn new(n: usize, p: usize, lambda: f64) -> Self {
        Self { basis: Mat::from_fn(n, p, |m, k| ((k + 1) as f64 * (m as f64 + 0.5) / n as f64 * 3.0).cos()), lambda }
    }
}

impl GalerkinModel for LinearModel {
    fn num_params(&self) -> usize {
        self.basis.ncols()
    }

    fn num_points(&self) -> usize {
        self.basis.nrows()
    }

    fn assemble(&self, theta: &[f64], sketch: &Sketch) -> rsng::Result<GalerkinSystem> {
        let n = self.basis.nrows();
        let rhs = (0..n).map(|m| self.lambda * (0..theta.len()).map(|k| self.basis[(m, k)] * theta[k]).sum::<f64>()).collect();
        let jacobian = Mat::from_fn(n, sketch.len(), |m, c| self.basis[(m, sketch.indices()[c])]);
        Ok(GalerkinSystem { jacobian, rhs })
    }
}

/// Observed RK4 order on `theta' = theta` over `[0, 1]` from dt, dt/2, dt/4.
pub fn rk4_observed_order() -> f64 {
    let model = LinearModel::new(8, 1, 1.0);
    let err = |dt: f64| {
        let cfg = IntegratorConfig::new(Scheme::Rk4, dt, 1.0, None, 1e-12, 0);
        let rec = integrate(&model, &[1.0], &cfg).unwrap();
        (rec.final_theta().unwrap()[0] - 1f64.exp()).abs()
    };
    let (e1, e2, e3) = (err(0.2), err(0.1), err(0.05));
    0.5 * ((e1 / e2).log2() + (e2 / e3).log2())
}

/// Heat-kernel and free-streaming reference errors.
pub fn reference_oracles() -> (f64, f64) {
    let mut heat = PdeProblem::allen_cahn();
    heat.reaction = Reaction::Off;
    let grid = heat.make_grid(&[1024]).unwrap();
    let u0: Vec<f64> = grid.iter().map(|x| x[0].sin()).collect();
    let sol = solve_reference_from(&heat, &grid, u0, 1e-4, &[1.0]).unwrap();
    let exact: Vec<f64> = grid.iter().map(|x| (-heat.epsilon).exp() * x[0].sin()).collect();
    let e_heat = rel_l2(&sol.values[0], &exact);

    let mut free = PdeProblem::vlasov();
    free.field_amplitude = 0.0;
    let g = |x: f64| 1.0 + 0.5 * x.cos();
    let h = |v: f64| (-0.5 * v * v).exp();
    let grid = free.make_grid(&[256, 128]).unwrap();
    let u0: Vec<f64> = grid.iter().map(|x| g(x[0]) * h(x[1])).collect();
    let sol = solve_reference_from(&free, &grid, u0, 2e-3, &[1.0]).unwrap();
    let exact: Vec<f64> = grid.iter().map(|x| g(x[0] - x[1]) * h(x[1])).collect();
    (e_heat, rel_l2(&sol.values[0], &exact))
}

/// Distinctness, determinism, adjointness and projector idempotence over
/// `cases` random draws. Returns the first violation.
pub fn sketch_suite(cases: u64) -> Result<(), String> {
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let p = rng.random_range(1..400);
        let s = rng.random_range(1..=p);
        let (seed, step) = (rng.random::<u64>(), rng.random_range(0..10_000u64));
        let sk = draw_sketch(p, s, seed, step).map_err(|e| e.to_string())?;
        let ix = sk.indices();
        if ix.len() != s || ix.windows(2).any(|w| w[0] >= w[1]) || ix.iter().any(|&i| i >= p) {
            return Err(format!("case {case}: indices not distinct, sorted and in range"));
        }
        if draw_sketch(p, s, seed, step).unwrap() != sk {
            return Err(format!("case {case}: redraw differs"));
        }
        let v: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rv = sk.restrict(&v).unwrap();
        let lw = sk.lift(&w).unwrap();
        let lhs: f64 = rv.iter().zip(&w).map(|(a, b)| a * b).sum();
        let rhs: f64 = v.iter().zip(&lw).map(|(a, b)| a * b).sum();
        if (lhs - rhs).abs() > 1e-12 * (1.0 + lhs.abs()) {
            return Err(format!("case {case}: <S^T v, w> = {lhs} but <v, S w> = {rhs}"));
        }
        let once = sk.lift(&rv).unwrap();
        let twice = sk.lift(&sk.restrict(&once).unwrap()).unwrap();
        if once != twice {
            return Err(format!("case {case}: S S^T is not idempotent"));
        }
    }
    Ok(())
}

/// Whether entries outside the sketch are bitwise unchanged by Euler steps of
/// the neural Galerkin system.
pub fn euler_freezes_unselected(steps: u64) -> bool {
    let problem = PdeProblem::burgers();
    let arch = ArchSpec::new(problem.periods(), 6, 3, Activation::Rational32);
    let points = problem.make_grid(&[200]).unwrap();
    let model = NeuralGalerkin::new(&arch, &problem, &points).unwrap();
    let p = arch.num_params();
    let mut theta = ParamVector::init(&arch, 5).into_values();
    for k in 0..steps {
        let sk = draw_sketch(p, 10, 3, k).unwrap();
        let (next, _) = euler_step(&model, &theta, 1e-3, &sk, 1e-4).unwrap();
        let chosen = sk.indices();
        if (0..p).filter(|j| chosen.binary_search(j).is_err()).any(|j| next[j].to_bits() != theta[j].to_bits()) {
            return false;
        }
        theta = next;
    }
    true
}
