//! Per-step timing of the sketched least-squares solve against the sketch size.

use std::time::Instant;

use anyhow::{bail, Result};
use rsng::linalg::lstsq;
use rsng::network::ParamVector;
use rsng::sketch::draw_sketch_with;
use rsng::timestepper::{GalerkinModel, NeuralGalerkin};

use crate::config::ExperimentConfig;
use crate::output::{num, Table, VERSION};

pub const WARMUP_STEPS: usize = 5;
pub const MIN_SAMPLES: usize = 20;

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub s: usize,
    /// Median seconds per least-squares solve.
    pub solve: f64,
    /// Median seconds to assemble the sketched system.
    pub assemble: f64,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub struct BenchTable {
    pub n: usize,
    pub p: usize,
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of log(solve time) against log(s).
    pub exponent: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// For each `s`, draws one sketch per step from the configured seed, assembles
/// the sketched system at seeded random network parameters and times the
/// solve. The first `WARMUP_STEPS` steps are discarded.
pub fn run_benchmark(cfg: &ExperimentConfig, sparsity: &[usize], samples: usize, seed: u64) -> Result<BenchTable> {
    if sparsity.len() < 3 {
        bail!("benchmark needs at least 3 sketch sizes, got {}", sparsity.len());
    }
    if samples < MIN_SAMPLES {
        bail!("benchmark needs at least {MIN_SAMPLES} timed steps per sketch size, got {samples}");
    }
    let r = cfg.resolve()?;
    let p = r.arch.num_params();
    if let Some(&bad) = sparsity.iter().find(|&&s| s == 0 || s > p) {
        bail!("sketch size {bad} outside [1, {p}]");
    }
    let theta = ParamVector::init(&r.arch, seed);
    let points = r.problem.make_grid(&cfg.solver.n_points)?;
    let model = NeuralGalerkin::new(&r.arch, &r.problem, &points)?;
    let mut rows = Vec::new();
    for &s in sparsity {
        let (mut solve, mut assemble) = (Vec::new(), Vec::new());
        for k in 0..WARMUP_STEPS + samples {
            let sk = draw_sketch_with(p, s, seed, k as u64, cfg.solver.sampling)?;
            let t0 = Instant::now();
            let sys = model.assemble(theta.values(), &sk)?;
            let t1 = Instant::now();
            let sol = lstsq(sys.jacobian.as_ref(), &sys.rhs, r.rcond)?;
            let t2 = Instant::now();
            std::hint::black_box(sol);
            if k >= WARMUP_STEPS {
                assemble.push((t1 - t0).as_secs_f64());
                solve.push((t2 - t1).as_secs_f64());
            }
        }
        rows.push(BenchRow { s, solve: median(&mut solve), assemble: median(&mut assemble), samples });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.s as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.solve).collect();
    Ok(BenchTable { n: points.len(), p, exponent: loglog_slope(&xs, &ys), rows })
}

impl BenchTable {
    pub fn to_table(&self, config_hash: &str, seed: u64) -> Table {
        let mut t = Table::new(["s", "n", "p", "median_solve_seconds", "median_assemble_seconds", "samples"])
            .meta("config_hash", config_hash)
            .meta("version", VERSION)
            .meta("seed", seed)
            .meta("exponent", num(self.exponent));
        for r in &self.rows {
            t.push(vec![
                r.s.to_string(),
                self.n.to_string(),
                self.p.to_string(),
                num(r.solve),
                num(r.assemble),
                r.samples.to_string(),
            ]);
        }
        t
    }
}
