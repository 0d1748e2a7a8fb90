//! On-disk formats: parameter vectors (text) and reference solutions (binary),
//! plus content-hash keyed caches for both.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fit::{fit_initial, FitConfig, FitResult};
use crate::network::{ArchSpec, ParamVector};
use crate::pde::PdeProblem;
use crate::reference::{solve_reference, ReferenceSolution};

const PARAM_MAGIC: &str = "rsng-params 1";
const REFERENCE_MAGIC: &[u8; 8] = b"RSNGREF1";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Hex digest (16 bytes) of the JSON encoding of `value`.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    hex::encode(&Sha256::digest(&bytes)[..16])
}

/// Writes `theta` as text: a header (`arch_hash`, `precision`, `p`, the
/// architecture as JSON) then one value per line.
pub fn write_params(path: &Path, arch: &ArchSpec, theta: &ParamVector) -> Result<()> {
    arch.check_theta(theta.values())?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{PARAM_MAGIC}")?;
    writeln!(w, "arch_hash {}", arch.hash())?;
    writeln!(w, "precision f64")?;
    writeln!(w, "p {}", arch.num_params())?;
    writeln!(w, "arch {}", serde_json::to_string(arch).expect("arch serializes"))?;
    for v in theta.values() {
        // `{:e}` round-trips exactly.
        writeln!(w, "{v:e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a parameter file, returning the stored architecture and values.
pub fn read_params(path: &Path) -> Result<(ArchSpec, ParamVector)> {
    let file = BufReader::new(fs::File::open(path)?);
    let mut lines = file.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| format_err(format!("{}: missing {what}", path.display())))
    };
    if next("magic line")? != PARAM_MAGIC {
        return Err(format_err(format!("{}: not a parameter file", path.display())));
    }
    let field = |line: String, key: &str| -> Result<String> {
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| format_err(format!("{}: expected `{key}` header, got `{line}`", path.display())))
    };
    let hash = field(next("arch_hash")?, "arch_hash")?;
    let precision = field(next("precision")?, "precision")?;
    if precision != "f64" {
        return Err(format_err(format!("unsupported precision `{precision}`")));
    }
    let p: usize = field(next("p")?, "p")?
        .parse()
        .map_err(|e| format_err(format!("bad parameter count: {e}")))?;
    let arch: ArchSpec = serde_json::from_str(&field(next("arch")?, "arch")?)
        .map_err(|e| format_err(format!("bad architecture: {e}")))?;
    arch.validate()?;
    if arch.hash() != hash {
        return Err(format_err(format!("arch_hash {hash} does not match stored architecture {}", arch.hash())));
    }
    if arch.num_params() != p {
        return Err(format_err(format!("header says p = {p}, architecture has {}", arch.num_params())));
    }
    let mut values = Vec::with_capacity(p);
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(t.parse::<f64>().map_err(|e| format_err(format!("bad value `{t}`: {e}")))?);
    }
    if values.len() != p {
        return Err(format_err(format!("expected {p} values, found {}", values.len())));
    }
    let theta = ParamVector::new(arch.layout(), values)?;
    Ok((arch, theta))
}

/// Reads a parameter file and checks it was written for `arch`.
pub fn read_params_for(path: &Path, arch: &ArchSpec) -> Result<ParamVector> {
    let (stored, theta) = read_params(path)?;
    if stored.hash() != arch.hash() {
        return Err(Error::Structure(format!(
            "{} holds parameters for arch {}, expected {}",
            path.display(),
            stored.hash(),
            arch.hash()
        )));
    }
    Ok(theta)
}

#[derive(Serialize, Deserialize)]
struct ReferenceHeader {
    problem: PdeProblem,
    grid_shape: Vec<usize>,
    times: Vec<f64>,
    dt: f64,
    method: String,
}

/// Binary layout: 8-byte magic, u64 header length, JSON header, then the
/// snapshots as little-endian f64 in time-major order.
pub fn write_reference(path: &Path, reference: &ReferenceSolution) -> Result<()> {
    let header = ReferenceHeader {
        problem: reference.problem.clone(),
        grid_shape: reference.grid_shape.clone(),
        times: reference.times.clone(),
        dt: reference.dt,
        method: reference.method.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(REFERENCE_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for snap in &reference.values {
        for v in snap {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_reference(path: &Path) -> Result<ReferenceSolution> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != REFERENCE_MAGIC {
        return Err(format_err(format!("{}: not a reference file", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: ReferenceHeader =
        serde_json::from_slice(&json).map_err(|e| format_err(format!("{}: bad header: {e}", path.display())))?;
    let size: usize = header.grid_shape.iter().product();
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 8 * size * header.times.len() {
        return Err(format_err(format!(
            "{}: expected {} snapshot bytes, found {}",
            path.display(),
            8 * size * header.times.len(),
            body.len()
        )));
    }
    let flat: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let values = if size == 0 { vec![Vec::new(); header.times.len()] } else { flat.chunks(size).map(<[f64]>::to_vec).collect() };
    Ok(ReferenceSolution {
        problem: header.problem,
        grid_shape: header.grid_shape,
        times: header.times,
        values,
        dt: header.dt,
        method: header.method,
    })
}

/// Directory-backed cache for reference solutions and initial-condition fits.
#[derive(Clone, Debug)]
pub struct Cache {
    dir: Option<PathBuf>,
}

impl Cache {
    /// Environment variable naming the default cache directory.
    pub const ENV: &'static str = "RSNG_CACHE_DIR";

    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    /// A cache that stores nothing.
    pub fn disabled() -> Self {
        Self { dir: None }
    }

    /// Uses `$RSNG_CACHE_DIR` if set, otherwise no caching.
    pub fn from_env() -> Self {
        match std::env::var_os(Self::ENV) {
            Some(d) if !d.is_empty() => Self::new(d),
            _ => Self::disabled(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, name: String) -> Result<Option<PathBuf>> {
        match &self.dir {
            None => Ok(None),
            Some(d) => {
                fs::create_dir_all(d)?;
                Ok(Some(d.join(name)))
            }
        }
    }

    /// Solves the reference problem, or loads an earlier solve of the same request.
    pub fn reference(
        &self,
        problem: &PdeProblem,
        grid_n: &[usize],
        dt_max: f64,
        output_times: &[f64],
    ) -> Result<ReferenceSolution> {
        let key = content_hash(&(problem, grid_n, dt_max, output_times, "fd4-rk4"));
        let path = self.path(format!("ref-{}-{key}.bin", problem.kind.name()))?;
        if let Some(p) = &path {
            if let Ok(r) = read_reference(p) {
                return Ok(r);
            }
        }
        let r = solve_reference(problem, grid_n, dt_max, output_times)?;
        if let Some(p) = &path {
            write_atomic(p, |tmp| write_reference(tmp, &r))?;
        }
        Ok(r)
    }

    /// Fits the initial condition, or loads the parameters of an earlier fit
    /// with the same architecture, problem and fit settings. Only the
    /// parameters and error are cached; iteration counts read back as zero.
    pub fn initial_fit(&self, arch: &ArchSpec, problem: &PdeProblem, cfg: &FitConfig) -> Result<FitResult> {
        let key = content_hash(&(arch, problem, cfg));
        let path = self.path(format!("fit-{}-{key}.txt", problem.kind.name()))?;
        let meta = path.as_ref().map(|p| p.with_extension("json"));
        if let (Some(p), Some(m)) = (&path, &meta) {
            if let (Ok(theta), Ok(meta)) = (read_params_for(p, arch), fs::read(m)) {
                if let Ok(meta) = serde_json::from_slice::<FitMeta>(&meta) {
                    return Ok(FitResult {
                        theta,
                        rel_error: meta.rel_error,
                        loss: meta.loss,
                        converged: meta.converged,
                        gauss_newton_iterations: 0,
                        adam_iterations: 0,
                        loss_history: Vec::new(),
                    });
                }
            }
        }
        let fit = fit_initial(arch, problem, cfg)?;
        if let (Some(p), Some(m)) = (&path, &meta) {
            write_atomic(p, |tmp| write_params(tmp, arch, &fit.theta))?;
            let meta = FitMeta { rel_error: fit.rel_error, loss: fit.loss, converged: fit.converged };
            write_atomic(m, |tmp| Ok(fs::write(tmp, serde_json::to_vec(&meta).expect("meta serializes"))?))?;
        }
        Ok(fit)
    }
}

#[derive(Serialize, Deserialize)]
struct FitMeta {
    rel_error: f64,
    loss: f64,
    converged: bool,
}

fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    write(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
