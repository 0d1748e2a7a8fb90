//! End-to-end acceptance runs. Each test prints one PASS/FAIL line to stdout
//! (uncaptured) and asserts the same condition.
//!
//! Initial-condition fits and reference solutions are cached under the cargo
//! target directory, so only the first run pays for them.

#[path = "../../core/tests/common/oracles.rs"]
#[allow(dead_code)]
mod oracles;

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{LazyLock, Mutex};

use rsng::io::Cache;
use rsng::reference::jacobian_spectrum;
use rsng_cli::bench::{run_benchmark, MIN_SAMPLES};
use rsng_cli::config::{from_table, parse_table, set_path, ExperimentConfig};
use rsng_cli::experiment::stats;
use rsng_cli::{run_seed, Session};

const SEEDS: [u64; 3] = [0, 1, 2];

/// Width of the networks in the dense-update comparisons, where width 25
/// would make every dense step a 1000 x 3386 solve.
const REDUCED_WIDTH: usize = 10;

struct Harness {
    session: Session,
    runs: HashMap<(String, u64), Run>,
}

#[derive(Clone, Copy, Debug)]
struct Run {
    p: usize,
    error: f64,
    residual: f64,
    fit_error: f64,
    diverged: bool,
}

static HARNESS: LazyLock<Mutex<Harness>> = LazyLock::new(|| {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("rsng-acceptance-cache");
    Mutex::new(Harness { session: Session::new(Cache::new(dir)), runs: HashMap::new() })
});

fn harness() -> std::sync::MutexGuard<'static, Harness> {
    HARNESS.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let verdict = if pass { "PASS" } else { "FAIL" };
    writeln!(out, "acceptance {criterion}: {verdict} ({detail})").unwrap();
}

const AC: &str = r#"
[problem]
kind = "allen_cahn"
[fit]
n_points = [1000]
iterations = 50000
decay_steps = 50000
[solver]
dt = 5e-3
end_time = 4.0
n_points = [1000]
rcond = 1e-4
"#;

const BURGERS: &str = r#"
[problem]
kind = "burgers"
[fit]
n_points = [1000]
iterations = 20000
decay_steps = 20000
[solver]
dt = 1e-3
end_time = 4.0
n_points = [1000]
rcond = 1e-4
"#;

fn config(base: &str, overrides: &[(&str, toml::Value)]) -> ExperimentConfig {
    let mut table = parse_table(base).unwrap();
    for (k, v) in overrides {
        set_path(&mut table, k, v.clone()).unwrap();
    }
    set_path(&mut table, "outputs.plots", false.into()).unwrap();
    let cfg = from_table(table).unwrap();
    cfg.resolve().unwrap();
    cfg
}

fn arch(width: usize, hidden: usize) -> [(&'static str, toml::Value); 2] {
    [("arch.hidden_width", (width as i64).into()), ("arch.num_hidden_layers", (hidden as i64).into())]
}

fn with_s(mut cfg: ExperimentConfig, s: Option<usize>) -> ExperimentConfig {
    cfg.solver.sketch_size = s;
    cfg
}

fn run(cfg: &ExperimentConfig, seed: u64) -> Run {
    let mut h = harness();
    let key = (cfg.hash(), seed);
    if let Some(r) = h.runs.get(&key) {
        return *r;
    }
    let o = run_seed(&mut h.session, cfg, seed).unwrap();
    let r = Run {
        p: o.p,
        error: o.spacetime_error(),
        residual: o.mean_residual_last_quarter(false),
        fit_error: o.fit_error,
        diverged: o.failure.is_some(),
    };
    h.runs.insert(key, r);
    r
}

/// Dense runs have no randomness, so one run stands for every seed.
fn run_seeds(cfg: &ExperimentConfig) -> Vec<Run> {
    if cfg.solver.sketch_size.is_none() {
        return vec![run(cfg, 0); SEEDS.len()];
    }
    SEEDS.iter().map(|&s| run(cfg, s)).collect()
}

fn median(v: &[f64]) -> f64 {
    stats(v).0
}

fn errors(runs: &[Run]) -> Vec<f64> {
    runs.iter().map(|r| if r.diverged { f64::INFINITY } else { r.error }).collect()
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" ")
}

#[test]
fn c1_burgers_accuracy_at_s_125() {
    let cfg = with_s(config(BURGERS, &arch(25, 6)), Some(125));
    let runs = run_seeds(&cfg);
    let e = errors(&runs);
    let worst = e.iter().copied().fold(0.0, f64::max);
    let pass = worst <= 1e-3 && runs[0].fit_error < 1e-4;
    report(
        "1 Burgers s=125",
        pass,
        &format!("spacetime errors {} <= 1e-3, fit error {:.2e} < 1e-4", fmt(&e), runs[0].fit_error),
    );
    assert!(pass);
}

#[test]
fn c2_allen_cahn_accuracy_at_s_150() {
    let cfg = with_s(config(AC, &arch(25, 6)), Some(150));
    let e = errors(&run_seeds(&cfg));
    let worst = e.iter().copied().fold(0.0, f64::max);
    let pass = worst <= 5e-4;
    report("2 Allen-Cahn s=150", pass, &format!("spacetime errors {} <= 5e-4", fmt(&e)));
    assert!(pass);
}

fn sparse_beats_small_dense(base: &str) -> (bool, String) {
    let small = config(base, &arch(REDUCED_WIDTH, 2));
    let p3 = small.resolve().unwrap().arch.num_params();
    let dense = median(&errors(&run_seeds(&with_s(small, None))));
    let sparse = median(&errors(&run_seeds(&with_s(config(base, &arch(REDUCED_WIDTH, 6)), Some(p3)))));
    (sparse <= 0.2 * dense, format!("7-layer s={p3} median {sparse:.3e} vs 3-layer dense {dense:.3e}, ratio {:.3}", sparse / dense))
}

#[test]
fn c3_sparse_deep_beats_dense_shallow() {
    let (ac, ac_detail) = sparse_beats_small_dense(AC);
    let (b, b_detail) = sparse_beats_small_dense(BURGERS);
    report("3 RSNG vs dense at matched cost", ac && b, &format!("Allen-Cahn: {ac_detail}; Burgers: {b_detail}; need ratio <= 0.2"));
    assert!(ac && b);
}

#[test]
fn c4_allen_cahn_sparsity_sweep() {
    let base = config(AC, &arch(REDUCED_WIDTH, 6));
    let p = base.resolve().unwrap().arch.num_params();
    let sizes: Vec<usize> = [64, 32, 16, 8, 4, 2, 1].iter().map(|d| p / d).collect();
    let medians: Vec<f64> = sizes
        .iter()
        .map(|&s| median(&errors(&run_seeds(&with_s(base.clone(), if s == p { None } else { Some(s) })))))
        .collect();
    let dense = *medians.last().unwrap();
    let best = medians.iter().copied().fold(f64::INFINITY, f64::min);
    let sparse_wins = medians[..medians.len() - 1].iter().any(|&m| m < dense);
    let drop_off = medians[0] >= 10.0 * best;
    let pass = sparse_wins && drop_off;
    let table: Vec<String> = sizes.iter().zip(&medians).map(|(s, m)| format!("s={s}:{m:.2e}")).collect();
    report("4 sparsity sweep", pass, &format!("p={p}, medians {}", table.join(" ")));
    assert!(pass);
}

#[test]
fn c5_solve_time_is_quadratic_in_s() {
    let cfg = config(BURGERS, &[("solver.n_points", toml::Value::Array(vec![2000i64.into()]))]);
    let table = run_benchmark(&cfg, &[100, 200, 400, 800], MIN_SAMPLES, 0).unwrap();
    let pass = (1.6..=2.4).contains(&table.exponent);
    let times: Vec<String> = table.rows.iter().map(|r| format!("s={}:{:.2e}s", r.s, r.solve)).collect();
    report("5 cost scaling", pass, &format!("n={}, exponent {:.2} in [1.6, 2.4]; {}", table.n, table.exponent, times.join(" ")));
    assert!(pass);
}

#[test]
fn c6_fitted_jacobian_is_low_rank() {
    let cfg = config(AC, &arch(25, 6));
    let r = cfg.resolve().unwrap();
    let fit = harness().session.fit(&r.arch, &r.problem, &cfg.fit).unwrap();
    let p = r.arch.num_params();
    // More points than parameters, so the rank is not capped by n.
    let points = r.problem.make_grid(&[4000]).unwrap();
    let sv = jacobian_spectrum(&r.arch, &fit.theta, &points).unwrap();
    let rank = sv.iter().filter(|&&s| s > 1e-4 * sv[0]).count();
    let pass = 2 * rank < p;
    report("6 Jacobian rank", pass, &format!("rank {rank} at 1e-4 sigma_1 with p = {p}, need < {}", p / 2));
    assert!(pass);
}

#[test]
fn c7_dense_residual_grows_faster() {
    let base = config(AC, &arch(REDUCED_WIDTH, 6));
    let res = |runs: Vec<Run>| median(&runs.iter().map(|r| r.residual).collect::<Vec<_>>());
    let dense = res(run_seeds(&with_s(base.clone(), None)));
    let sparse = res(run_seeds(&with_s(base, Some(150))));
    let pass = dense > sparse;
    report("7 residual ordering", pass, &format!("last-quarter residual dense {dense:.3e} > sparse s=150 {sparse:.3e}"));
    assert!(pass);
}

#[test]
fn c8_property_oracles() {
    let g = oracles::gradient_oracle(100);
    let a = g.first < 1e-6 && g.second < 1e-5 && g.param < 1e-6;
    let ne = oracles::lstsq_vs_normal_equations(50);
    let mn = oracles::minimum_norm_cases(30);
    let b = ne < 1e-8 && mn < 1e-10;
    let order = oracles::rk4_observed_order();
    let c = (order - 4.0).abs() <= 0.2;
    let (heat, stream) = oracles::reference_oracles();
    let d = heat < 1e-6 && stream < 1e-3;
    let e = oracles::sketch_suite(2000);
    let f = oracles::euler_freezes_unselected(20);
    let parts = [
        ("a gradients", a, format!("{g:?}")),
        ("b lstsq", b, format!("normal equations {ne:.1e}, minimum norm {mn:.1e}")),
        ("c RK4 order", c, format!("{order:.3}")),
        ("d reference oracles", d, format!("heat {heat:.1e}, free streaming {stream:.1e}")),
        ("e sketch invariants", e.is_ok(), format!("{e:?}")),
        ("f frozen parameters", f, String::new()),
    ];
    for (name, ok, detail) in &parts {
        report(&format!("8{name}"), *ok, detail);
    }
    assert!(parts.iter().all(|p| p.1));
}

#[test]
#[ignore = "hours on one core; run with --ignored"]
fn c9_vlasov_extended_run() {
    let base = r#"
[problem]
kind = "vlasov"
[fit]
n_points = [200, 100]
iterations = 20000
decay_steps = 20000
[solver]
dt = 5e-3
end_time = 3.0
sketch_size = 800
n_points = [200, 100]
rcond = 1e-5
"#;
    let cfg = config(base, &[]);
    let r = run(&cfg, 0);
    let pass = !r.diverged && r.error <= 5e-3;
    report("9 Vlasov s=800", pass, &format!("spacetime error {:.3e} <= 5e-3, p = {}", r.error, r.p));
    assert!(pass);
}
