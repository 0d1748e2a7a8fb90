//! Experiment configuration: TOML with strict keys, dotted-path overrides and
//! sweep expansion.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rsng::fit::FitConfig;
use rsng::io::content_hash;
use rsng::network::{Activation, ArchSpec};
use rsng::pde::{PdeProblem, ProblemKind, Reaction};
use rsng::sketch::SamplingMode;
use rsng::timestepper::{IntegratorConfig, Scheme, SketchRefresh};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    pub fit: FitConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub reaction: Option<Reaction>,
    #[serde(default)]
    pub field_amplitude: Option<f64>,
}

impl ProblemConfig {
    pub fn build(&self) -> PdeProblem {
        let mut p = PdeProblem::new(self.kind);
        if let Some(e) = self.epsilon {
            p.epsilon = e;
        }
        if let Some(r) = self.reaction {
            p.reaction = r;
        }
        if let Some(a) = self.field_amplitude {
            p.field_amplitude = a;
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    #[serde(default = "default_width")]
    pub hidden_width: usize,
    /// Embedding plus hidden layers; a 7-layer network has 6.
    #[serde(default = "default_hidden_layers")]
    pub num_hidden_layers: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_width() -> usize {
    25
}
fn default_hidden_layers() -> usize {
    6
}
fn default_activation() -> Activation {
    Activation::Rational32
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { hidden_width: default_width(), num_hidden_layers: default_hidden_layers(), activation: default_activation() }
    }
}

impl ArchConfig {
    pub fn build(&self, problem: &PdeProblem) -> ArchSpec {
        ArchSpec::new(problem.periods(), self.hidden_width, self.num_hidden_layers, self.activation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub scheme: Scheme,
    /// Problem default when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub end_time: Option<f64>,
    /// Parameters updated per step; absent means dense.
    #[serde(default)]
    pub sketch_size: Option<usize>,
    /// Equidistant collocation points per spatial dimension.
    pub n_points: Vec<usize>,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default)]
    pub refresh: SketchRefresh,
    #[serde(default)]
    pub rcond: Option<f64>,
    #[serde(default = "default_divergence_bound")]
    pub divergence_bound: f64,
}

fn default_divergence_bound() -> f64 {
    1e6
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Grid per dimension; 2048 in 1D and 512 x 256 for Vlasov by default.
    #[serde(default)]
    pub grid: Option<Vec<usize>>,
    /// Largest reference time step; by default the solver dt capped by the
    /// stability limit.
    #[serde(default)]
    pub dt_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Time between recorded snapshots; a multiple of dt.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: f64,
    /// Keep every this many reference grid points (per dimension) in snapshots.csv.
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_true")]
    pub plots: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_snapshot_every() -> f64 {
    0.1
}
fn default_stride() -> usize {
    8
}
fn default_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            snapshot_every: default_snapshot_every(),
            snapshot_stride: default_stride(),
            plots: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axes: Vec<SweepAxis>,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
}

fn default_max_cells() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted config path, e.g. `solver.sketch_size`.
    pub path: String,
    pub values: Vec<Value>,
}

/// Fully resolved settings of one run.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub problem: PdeProblem,
    pub arch: ArchSpec,
    pub reference_grid: Vec<usize>,
    pub dt: f64,
    pub end_time: f64,
    pub rcond: f64,
}

impl ExperimentConfig {
    pub fn resolve(&self) -> Result<Resolved> {
        let problem = self.problem.build();
        problem.validate()?;
        let arch = self.arch.build(&problem);
        arch.validate()?;
        self.fit.validate()?;
        let d = problem.spatial_dim();
        if self.fit.n_points.len() != d {
            bail!("fit.n_points needs {d} entries, got {}", self.fit.n_points.len());
        }
        if self.solver.n_points.len() != d {
            bail!("solver.n_points needs {d} entries, got {}", self.solver.n_points.len());
        }
        let reference_grid = match &self.reference.grid {
            Some(g) => g.clone(),
            None if d == 1 => vec![2048],
            None => vec![512, 256],
        };
        if reference_grid.len() != d {
            bail!("reference.grid needs {d} entries, got {}", reference_grid.len());
        }
        let dt = self.solver.dt.unwrap_or(problem.default_dt);
        let end_time = self.solver.end_time.unwrap_or(problem.end_time);
        let rcond = self.solver.rcond.unwrap_or(problem.default_rcond);
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if self.outputs.snapshot_stride == 0 {
            bail!("outputs.snapshot_stride must be positive");
        }
        rsng::pde::steps_for(self.outputs.snapshot_every, dt)
            .context("outputs.snapshot_every must be a multiple of solver.dt")?;
        let r = Resolved { problem, arch, reference_grid, dt, end_time, rcond };
        r.integrator(self, 0)?.validate(r.arch.num_params())?;
        Ok(r)
    }

    /// Hash of everything that affects the numbers (not seeds or output paths).
    pub fn hash(&self) -> String {
        content_hash(&(
            &self.problem,
            &self.arch,
            &self.fit,
            &self.solver,
            &self.reference,
            self.outputs.snapshot_every,
            self.outputs.snapshot_stride,
        ))
    }
}

impl Resolved {
    pub fn integrator(&self, cfg: &ExperimentConfig, seed: u64) -> Result<IntegratorConfig> {
        let p = self.arch.num_params();
        let mut ic = IntegratorConfig::new(
            cfg.solver.scheme,
            self.dt,
            self.end_time,
            cfg.solver.sketch_size.filter(|&s| s < p),
            self.rcond,
            seed,
        );
        if let Some(s) = cfg.solver.sketch_size {
            if s == 0 || s > p {
                bail!("solver.sketch_size = {s} must lie in [1, {p}]");
            }
        }
        ic.sampling = cfg.solver.sampling;
        ic.refresh = cfg.solver.refresh;
        ic.divergence_bound = cfg.solver.divergence_bound;
        ic.record_every = rsng::pde::steps_for(cfg.outputs.snapshot_every, self.dt)?;
        Ok(ic)
    }

    pub fn sketch_size(&self, cfg: &ExperimentConfig) -> usize {
        cfg.solver.sketch_size.unwrap_or(self.arch.num_params())
    }
}

/// Parses `key.path=value`; the value is read as a TOML literal, falling
/// back to a bare string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| anyhow!("override `{spec}` is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override `{spec}` has an empty key segment");
    }
    let raw = raw.trim();
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

/// Sets a dotted path inside a table, creating intermediate tables.
pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    let mut walked = String::new();
    for part in parts {
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(part);
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| anyhow!("`{walked}` is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

pub fn parse_table(text: &str) -> Result<Table> {
    Ok(toml::from_str(text)?)
}

/// Deserializes a table, reporting the offending field path on failure.
pub fn from_table(table: Table) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("config field `{path}`: {}", e.into_inner())
    })?;
    Ok(cfg)
}

/// Loads a config file and applies `key=value` overrides in order.
pub fn load(path: &Path, overrides: &[String]) -> Result<(ExperimentConfig, Table)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table = parse_table(&text).with_context(|| format!("parsing {}", path.display()))?;
    for o in overrides {
        let (k, v) = parse_override(o)?;
        set_path(&mut table, &k, v)?;
    }
    let cfg = from_table(table.clone()).with_context(|| format!("in {}", path.display()))?;
    cfg.resolve()?;
    Ok((cfg, table))
}

/// One point of a sweep: the axis assignments and the resulting config.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub assignments: Vec<(String, Value)>,
    pub config: ExperimentConfig,
}

impl SweepCell {
    /// Directory-safe label such as `solver.sketch_size=125`.
    pub fn label(&self) -> String {
        if self.assignments.is_empty() {
            return "base".into();
        }
        self.assignments
            .iter()
            .map(|(k, v)| format!("{k}={}", value_label(v)))
            .collect::<Vec<_>>()
            .join(",")
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "._=,-".contains(c) { c } else { '_' })
            .collect()
    }
}

pub fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Float(f) => format!("{f:?}"),
        other => other.to_string(),
    }
}

/// Expands the sweep cross product. `max_cells` overrides the config cap.
pub fn expand_sweep(table: &Table, max_cells: Option<usize>) -> Result<Vec<SweepCell>> {
    let base = from_table(table.clone())?;
    let Some(sweep) = base.sweep.clone() else {
        return Ok(vec![SweepCell { assignments: Vec::new(), config: base }]);
    };
    let cap = max_cells.unwrap_or(sweep.max_cells);
    let mut total: usize = 1;
    for axis in &sweep.axes {
        if axis.values.is_empty() {
            bail!("sweep axis `{}` has no values", axis.path);
        }
        if axis.path.starts_with("sweep") {
            bail!("sweep axis `{}` may not change the sweep itself", axis.path);
        }
        total = total.saturating_mul(axis.values.len());
    }
    if total > cap {
        bail!("sweep has {total} cells, above the cap of {cap}; raise sweep.max_cells to allow it");
    }
    let mut cells = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut t = table.clone();
        let mut assignments = Vec::new();
        // Last axis varies fastest.
        let mut picks = vec![0; sweep.axes.len()];
        for (i, axis) in sweep.axes.iter().enumerate().rev() {
            picks[i] = rem % axis.values.len();
            rem /= axis.values.len();
        }
        for (axis, &k) in sweep.axes.iter().zip(&picks) {
            let v = axis.values[k].clone();
            set_path(&mut t, &axis.path, v.clone())?;
            assignments.push((axis.path.clone(), v));
        }
        let config = from_table(t).with_context(|| format!("sweep cell {flat}"))?;
        config.resolve().with_context(|| format!("sweep cell {flat}"))?;
        cells.push(SweepCell { assignments, config });
    }
    Ok(cells)
}
