use faer::Mat;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::ReferenceSolution;
use crate::error::{validation, Result};
use crate::fit::{fit_to_field, FitConfig};
use crate::linalg::{lstsq, singular_values};
use crate::network::{batch_jacobian, ArchSpec, ParamVector};
use crate::pde::CollocationSet;
use crate::sketch::{stream_rng, Sketch};
use crate::timestepper::{GalerkinModel, NeuralGalerkin};

/// Singular values of the full batch Jacobian, descending.
pub fn jacobian_spectrum(arch: &ArchSpec, theta: &ParamVector, points: &CollocationSet) -> Result<Vec<f64>> {
    let jac = batch_jacobian(arch, theta, points, None)?;
    let mut sv = if jac.nrows() > jac.ncols() {
        // Same singular values from the square triangular factor.
        let r = jac.qr().thin_R().to_owned();
        singular_values(r.as_ref())?
    } else {
        singular_values(jac.as_ref())?
    };
    for s in &mut sv {
        *s = s.abs();
    }
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnCorrelation {
    /// Parameter index of each sampled column.
    pub indices: Vec<usize>,
    /// Row-major `k x k` Pearson correlations; zero for flagged columns.
    pub values: Vec<f64>,
    /// Columns with zero variance over the points.
    pub flagged: Vec<bool>,
}

impl ColumnCorrelation {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    /// Median absolute off-diagonal correlation among unflagged columns.
    pub fn median_abs_offdiag(&self) -> f64 {
        let k = self.len();
        let mut v: Vec<f64> = (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .filter(|&(i, j)| !self.flagged[i] && !self.flagged[j])
            .map(|(i, j)| self.get(i, j).abs())
            .collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        if v.len() % 2 == 0 {
            0.5 * (v[mid - 1] + v[mid])
        } else {
            v[mid]
        }
    }
}

/// Pearson correlation of the columns of `jac`.
pub(crate) fn correlation_of_columns(jac: &Mat<f64>, indices: Vec<usize>) -> ColumnCorrelation {
    let (n, k) = (jac.nrows(), jac.ncols());
    let mut centered = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    for c in 0..k {
        let col: Vec<f64> = (0..n).map(|m| jac[(m, c)]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let cen: Vec<f64> = col.iter().map(|x| x - mean).collect();
        norms.push(cen.iter().map(|x| x * x).sum::<f64>().sqrt());
        centered.push(cen);
    }
    let scale = norms.iter().copied().fold(0.0f64, f64::max);
    let flagged: Vec<bool> = norms.iter().map(|&s| s <= 1e-14 * scale.max(f64::MIN_POSITIVE)).collect();
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let c = if flagged[i] || flagged[j] {
                0.0
            } else if i == j {
                1.0
            } else {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            values[i * k + j] = c;
            values[j * k + i] = c;
        }
    }
    ColumnCorrelation { indices, values, flagged }
}

/// Correlations among `sample_k` seeded random Jacobian columns that are not
/// identically zero.
pub fn column_correlation(
    arch: &ArchSpec,
    theta: &ParamVector,
    points: &CollocationSet,
    sample_k: usize,
    seed: u64,
) -> Result<ColumnCorrelation> {
    let p = arch.num_params();
    if sample_k == 0 || sample_k > p {
        return Err(validation(format!("sample size {sample_k} must lie in [1, {p}]")));
    }
    let jac = batch_jacobian(arch, theta, points, None)?;
    let nonzero: Vec<usize> = (0..p).filter(|&c| (0..jac.nrows()).any(|m| jac[(m, c)] != 0.0)).collect();
    let k = sample_k.min(nonzero.len());
    let mut rng = stream_rng(seed, 0);
    let mut picked: Vec<usize> = index::sample(&mut rng, nonzero.len(), k).into_iter().map(|i| nonzero[i]).collect();
    picked.sort_unstable();
    let sub = Mat::from_fn(jac.nrows(), k, |m, c| jac[(m, picked[c])]);
    Ok(correlation_of_columns(&sub, picked))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectFitEntry {
    pub time: f64,
    /// Dense least-squares residual at the fitted parameters.
    pub residual: f64,
    pub residual_rel: f64,
    pub fit_error: f64,
    /// Set when the fit missed its tolerance.
    pub flagged: bool,
}

/// At each time, fits a fresh network to the reference snapshot and solves the
/// dense Galerkin system on `points` with that network.
pub fn direct_fit_residual(
    arch: &ArchSpec,
    reference: &ReferenceSolution,
    points: &CollocationSet,
    cfg: &FitConfig,
    rcond: f64,
    times: &[f64],
) -> Result<Vec<DirectFitEntry>> {
    let grid = reference.grid()?;
    let model = NeuralGalerkin::new(arch, &reference.problem, points)?;
    let dense = Sketch::dense(model.num_params());
    times
        .iter()
        .map(|&t| {
            let snap = reference.at(t).ok_or_else(|| validation(format!("reference has no snapshot at t = {t}")))?;
            let fit = fit_to_field(arch, &grid, snap, cfg)?;
            let sys = model.assemble(fit.theta.values(), &dense)?;
            let sol = lstsq(sys.jacobian.as_ref(), &sys.rhs, rcond)?;
            let fnorm = crate::linalg::norm(&sys.rhs);
            Ok(DirectFitEntry {
                time: t,
                residual: sol.residual_norm,
                residual_rel: if fnorm > 0.0 { sol.residual_norm / fnorm } else { 0.0 },
                fit_error: fit.rel_error,
                flagged: !fit.converged,
            })
        })
        .collect()
}
