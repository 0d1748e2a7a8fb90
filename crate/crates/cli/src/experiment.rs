//! Fit, integrate, compare against the reference and write the CSV artifacts.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use rsng::fit::{FitConfig, FitResult};
use rsng::io::{content_hash, Cache};
use rsng::network::{ArchSpec, BatchEval, DerivOrder};
use rsng::pde::{CollocationSet, PdeProblem};
use rsng::reference::{max_stable_dt, relative_l2, ErrorReport, ReferenceSolution};
use rsng::timestepper::{integrate, NeuralGalerkin, TrajectoryRecord};
use rsng::Error;
use toml::Table as TomlTable;

use crate::config::{expand_sweep, value_label, ExperimentConfig, Resolved};
use crate::output::{num, opt, Table, VERSION};

/// Disk cache plus in-process memo of fits and reference solutions.
pub struct Session {
    cache: Cache,
    fits: HashMap<String, FitResult>,
    references: HashMap<String, Arc<ReferenceSolution>>,
}

impl Session {
    pub fn new(cache: Cache) -> Self {
        Self { cache, fits: HashMap::new(), references: HashMap::new() }
    }

    pub fn fit(&mut self, arch: &ArchSpec, problem: &PdeProblem, cfg: &FitConfig) -> Result<FitResult> {
        let key = content_hash(&(arch, problem, cfg));
        if let Some(f) = self.fits.get(&key) {
            return Ok(f.clone());
        }
        let f = self.cache.initial_fit(arch, problem, cfg)?;
        self.fits.insert(key, f.clone());
        Ok(f)
    }

    /// Reference snapshots at `times`; `dt_max` defaults to `dt` capped by the
    /// explicit stability limit on the grid.
    pub fn reference(
        &mut self,
        problem: &PdeProblem,
        grid_n: &[usize],
        dt: f64,
        dt_max: Option<f64>,
        times: &[f64],
    ) -> Result<Arc<ReferenceSolution>> {
        let dt_max = match dt_max {
            Some(d) => d,
            None => {
                let grid = problem.make_grid(grid_n)?;
                let u0: Vec<f64> = grid.iter().map(|x| problem.initial_condition(x)).collect();
                dt.min(0.99 * max_stable_dt(problem, &grid, &u0))
            }
        };
        let key = content_hash(&(problem, grid_n, dt_max, times));
        if let Some(r) = self.references.get(&key) {
            return Ok(r.clone());
        }
        let r = Arc::new(self.cache.reference(problem, grid_n, dt_max, times)?);
        self.references.insert(key, r.clone());
        Ok(r)
    }
}

/// Result of one seed of one configuration.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub problem: String,
    pub p: usize,
    pub s: usize,
    /// `None` when the run finished; the divergence message otherwise.
    pub failure: Option<String>,
    pub record: TrajectoryRecord,
    /// Network values on the reference grid at `record.times`.
    pub approx: Vec<Vec<f64>>,
    pub report: ErrorReport,
    pub fit_error: f64,
    pub end_time: f64,
    pub reference: Arc<ReferenceSolution>,
    pub config_hash: String,
}

impl RunOutcome {
    pub fn status(&self) -> &'static str {
        if self.failure.is_none() {
            "ok"
        } else {
            "diverged"
        }
    }

    pub fn spacetime_error(&self) -> f64 {
        self.report.spacetime_rel_l2
    }

    pub fn final_error(&self) -> f64 {
        *self.report.per_time_rel_l2.last().expect("at least the initial snapshot")
    }

    /// Mean least-squares residual over steps in the final quarter of `[0, T]`.
    pub fn mean_residual_last_quarter(&self, relative: bool) -> f64 {
        let r = if relative { &self.record.residual_rel } else { &self.record.residual_abs };
        let cut = 0.75 * self.end_time;
        let tail: Vec<f64> =
            self.record.step_times.iter().zip(r).filter(|(t, _)| **t > cut + 1e-12).map(|(_, v)| *v).collect();
        if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    }
}

/// Evaluates parameter snapshots on a grid.
pub fn evaluate_snapshots(arch: &ArchSpec, snapshots: &[Vec<f64>], grid: &CollocationSet) -> Result<Vec<Vec<f64>>> {
    snapshots
        .iter()
        .map(|th| Ok(BatchEval::new(arch, th, grid, DerivOrder::Value)?.values().to_vec()))
        .collect()
}

pub fn snapshot_times(end_time: f64, every: f64) -> Result<Vec<f64>> {
    let k = rsng::pde::steps_for(end_time, every).context("end time must be a multiple of outputs.snapshot_every")?;
    Ok((0..=k).map(|i| i as f64 * every).collect())
}

/// Fits the initial condition (cached), integrates with `seed` and compares to
/// the reference. Divergence is reported in the outcome, not as an error.
pub fn run_seed(session: &mut Session, cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let r: Resolved = cfg.resolve()?;
    let fit = session.fit(&r.arch, &r.problem, &cfg.fit).context("fitting the initial condition")?;
    let times = snapshot_times(r.end_time, cfg.outputs.snapshot_every)?;
    let reference = session.reference(&r.problem, &r.reference_grid, r.dt, cfg.reference.dt_max, &times)?;
    let points = r.problem.make_grid(&cfg.solver.n_points)?;
    let model = NeuralGalerkin::new(&r.arch, &r.problem, &points)?;
    let ic = r.integrator(cfg, seed)?;
    let (record, failure) = match integrate(&model, fit.theta.values(), &ic) {
        Ok(rec) => (rec, None),
        Err(Error::Divergence { step, reason, partial }) => {
            (partial.map(|b| *b).unwrap_or_default(), Some(format!("step {step}: {reason}")))
        }
        Err(e) => return Err(e.into()),
    };
    let grid = reference.grid()?;
    let approx = evaluate_snapshots(&r.arch, &record.snapshots, &grid)?;
    let report = relative_l2(&approx, &record.times, &reference)?;
    Ok(RunOutcome {
        seed,
        problem: r.problem.kind.name().to_string(),
        p: r.arch.num_params(),
        s: r.sketch_size(cfg),
        failure,
        record,
        approx,
        report,
        fit_error: fit.rel_error,
        end_time: r.end_time,
        reference,
        config_hash: cfg.hash(),
    })
}

pub const SUMMARY_COLUMNS: [&str; 13] = [
    "problem",
    "p",
    "s",
    "seed",
    "status",
    "spacetime_rel_l2",
    "final_rel_l2",
    "fit_rel_l2",
    "mean_residual_last_quarter",
    "mean_residual_rel_last_quarter",
    "steps",
    "total_runtime",
    "mean_step_time",
];

pub fn summary_row(o: &RunOutcome) -> Vec<String> {
    let steps = o.record.step_times.len();
    let total = o.record.total_wall_time();
    vec![
        o.problem.clone(),
        o.p.to_string(),
        o.s.to_string(),
        o.seed.to_string(),
        o.status().to_string(),
        num(o.spacetime_error()),
        num(o.final_error()),
        num(o.fit_error),
        num(o.mean_residual_last_quarter(false)),
        num(o.mean_residual_last_quarter(true)),
        steps.to_string(),
        num(total),
        num(if steps > 0 { total / steps as f64 } else { 0.0 }),
    ]
}

/// Per-step table: residuals and wall time every step, relative error at
/// recorded snapshots (blank otherwise).
pub fn errors_table(o: &RunOutcome) -> Table {
    let mut t = Table::new(["step", "time", "per_time_rel_l2", "residual", "residual_rel", "wall_time"])
        .meta("config_hash", &o.config_hash)
        .meta("version", VERSION)
        .meta("seed", o.seed);
    if let Some(f) = &o.failure {
        t = t.meta("status", format!("diverged at {f}"));
    }
    let err_at = |time: f64| {
        o.record
            .times
            .iter()
            .position(|&s| (s - time).abs() <= 1e-9 * time.abs().max(1.0))
            .map(|k| o.report.per_time_rel_l2[k])
    };
    t.push(vec!["0".into(), num(0.0), opt(err_at(0.0)), String::new(), String::new(), String::new()]);
    for (k, &time) in o.record.step_times.iter().enumerate() {
        t.push(vec![
            (k + 1).to_string(),
            num(time),
            opt(err_at(time)),
            num(o.record.residual_abs[k]),
            num(o.record.residual_rel[k]),
            num(o.record.wall_times[k]),
        ]);
    }
    t
}

/// Network and reference values on the (strided) reference grid.
pub fn snapshots_table(o: &RunOutcome, stride: usize) -> Result<Table> {
    let grid = o.reference.grid()?;
    let d = grid.dim();
    let coords = ["x", "v"];
    let mut header = vec!["time".to_string()];
    header.extend(coords[..d].iter().map(|c| c.to_string()));
    header.extend(["u".to_string(), "u_ref".to_string()]);
    let mut t = Table::new(header).meta("config_hash", &o.config_hash).meta("version", VERSION).meta("seed", o.seed);
    let shape = grid.shape().to_vec();
    let keep = |m: usize| {
        let mut rem = m;
        for &n in shape.iter().rev() {
            if (rem % n) % stride != 0 {
                return false;
            }
            rem /= n;
        }
        true
    };
    for (k, &time) in o.record.times.iter().enumerate() {
        let Some(reference) = o.reference.at(time) else { continue };
        for m in (0..grid.len()).filter(|&m| keep(m)) {
            let mut row = vec![num(time)];
            row.extend(grid.point(m).iter().map(|&x| num(x)));
            row.push(num(o.approx[k][m]));
            row.push(num(reference[m]));
            t.push(row);
        }
    }
    Ok(t)
}

pub fn summary_table(cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> Table {
    let seeds: Vec<String> = outcomes.iter().map(|o| o.seed.to_string()).collect();
    let mut t = Table::new(SUMMARY_COLUMNS)
        .meta("config_hash", cfg.hash())
        .meta("version", VERSION)
        .meta("seed", seeds.join(" "));
    for o in outcomes {
        t.push(summary_row(o));
    }
    t
}

/// Runs every seed and writes `summary.csv` plus per-seed `errors.csv` and
/// `snapshots.csv` under `out/seed-N/`.
pub fn run_experiment(session: &mut Session, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RunOutcome>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), toml::to_string(cfg)?)?;
    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        let clock = Instant::now();
        let o = run_seed(session, cfg, seed)?;
        let dir = out.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir)?;
        errors_table(&o).write(&dir.join("errors.csv"))?;
        snapshots_table(&o, cfg.outputs.snapshot_stride)?.write(&dir.join("snapshots.csv"))?;
        eprintln!(
            "[{}] seed {seed}: {} spacetime error {:.3e} ({:.1}s)",
            o.problem,
            o.status(),
            o.spacetime_error(),
            clock.elapsed().as_secs_f64()
        );
        outcomes.push(o);
    }
    summary_table(cfg, &outcomes).write(&out.join("summary.csv"))?;
    if cfg.outputs.plots {
        crate::figures::emit_figures(out)?;
    }
    Ok(outcomes)
}

/// Median, mean and two standard errors of a sample.
pub fn stats(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let mean = s.iter().sum::<f64>() / n as f64;
    let two_se = if n > 1 {
        let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        2.0 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    (median, mean, two_se)
}

/// One `run_experiment` per sweep cell in `out/<cell label>/`, plus
/// `sweep_summary.csv` (one row per cell and seed) and `sweep_stats.csv`.
pub fn run_sweep(
    session: &mut Session,
    table: &TomlTable,
    out: &Path,
    max_cells: Option<usize>,
) -> Result<Vec<(String, Vec<RunOutcome>)>> {
    let cells = expand_sweep(table, max_cells)?;
    let base = &cells[0].config;
    let axes: Vec<String> = cells[0].assignments.iter().map(|(k, _)| k.clone()).collect();
    let mut header = vec!["cell".to_string()];
    header.extend(axes.iter().cloned());
    header.extend(SUMMARY_COLUMNS.iter().map(|s| s.to_string()));
    let mut summary = Table::new(header).meta("config_hash", content_hash(&cells.iter().map(|c| c.config.hash()).collect::<Vec<_>>())).meta("version", VERSION).meta("seed", base.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "));
    let mut stat_header = vec!["cell".to_string()];
    stat_header.extend(axes.iter().cloned());
    stat_header.extend(
        ["p", "s", "seeds", "median_spacetime_rel_l2", "mean_spacetime_rel_l2", "two_se_spacetime_rel_l2", "median_residual_last_quarter", "diverged"]
            .map(String::from),
    );
    let mut stat = Table::new(stat_header);
    stat.meta = summary.meta.clone();
    let mut results = Vec::new();
    for cell in &cells {
        let label = cell.label();
        let mut cfg = cell.config.clone();
        cfg.outputs.plots = false;
        let outcomes = run_experiment(session, &cfg, &out.join(&label))?;
        let values: Vec<String> = cell.assignments.iter().map(|(_, v)| value_label(v)).collect();
        for o in &outcomes {
            let mut row = vec![label.clone()];
            row.extend(values.iter().cloned());
            row.extend(summary_row(o));
            summary.push(row);
        }
        let errs: Vec<f64> = outcomes.iter().map(RunOutcome::spacetime_error).collect();
        let res: Vec<f64> = outcomes.iter().map(|o| o.mean_residual_last_quarter(false)).collect();
        let (median, mean, two_se) = stats(&errs);
        let mut row = vec![label.clone()];
        row.extend(values.iter().cloned());
        row.extend([
            outcomes[0].p.to_string(),
            outcomes[0].s.to_string(),
            outcomes.len().to_string(),
            num(median),
            num(mean),
            num(two_se),
            num(stats(&res).0),
            outcomes.iter().filter(|o| o.failure.is_some()).count().to_string(),
        ]);
        stat.push(row);
        results.push((label, outcomes));
    }
    summary.write(&out.join("sweep_summary.csv"))?;
    stat.write(&out.join("sweep_stats.csv"))?;
    if base.outputs.plots {
        crate::figures::emit_figures(out)?;
    }
    Ok(results)
}

/// Fits the initial condition and writes `theta0.txt`, `fit.csv` and the
/// Jacobian spectrum of the fitted network on the collocation points.
pub fn run_fit(session: &mut Session, cfg: &ExperimentConfig, out: &Path) -> Result<FitResult> {
    let r = cfg.resolve()?;
    fs::create_dir_all(out)?;
    let clock = Instant::now();
    let fit = session.fit(&r.arch, &r.problem, &cfg.fit)?;
    let secs = clock.elapsed().as_secs_f64();
    rsng::io::write_params(&out.join("theta0.txt"), &r.arch, &fit.theta)?;
    let mut t = Table::new(["iteration", "loss"]).meta("config_hash", cfg.hash()).meta("version", VERSION).meta("seed", cfg.fit.rng_seed);
    for (i, l) in fit.loss_history.iter().enumerate() {
        t.push(vec![i.to_string(), num(*l)]);
    }
    t.meta.push(("rel_error".into(), num(fit.rel_error)));
    t.meta.push(("converged".into(), fit.converged.to_string()));
    t.meta.push(("seconds".into(), num(secs)));
    t.write(&out.join("fit.csv"))?;
    let points = r.problem.make_grid(&cfg.solver.n_points)?;
    let sv = rsng::reference::jacobian_spectrum(&r.arch, &fit.theta, &points)?;
    let mut t = Table::new(["index", "sigma", "sigma_rel"]).meta("config_hash", cfg.hash()).meta("version", VERSION).meta("seed", cfg.fit.rng_seed);
    for (i, s) in sv.iter().enumerate() {
        t.push(vec![i.to_string(), num(*s), num(s / sv[0])]);
    }
    t.write(&out.join("spectrum.csv"))?;
    if cfg.outputs.plots {
        crate::figures::emit_figures(out)?;
    }
    Ok(fit)
}

/// Solves the reference problem and writes `reference.bin`.
pub fn run_reference(session: &mut Session, cfg: &ExperimentConfig, out: &Path) -> Result<Arc<ReferenceSolution>> {
    let r = cfg.resolve()?;
    fs::create_dir_all(out)?;
    let times = snapshot_times(r.end_time, cfg.outputs.snapshot_every)?;
    let reference = session.reference(&r.problem, &r.reference_grid, r.dt, cfg.reference.dt_max, &times)?;
    rsng::io::write_reference(&out.join("reference.bin"), &reference)?;
    Ok(reference)
}
