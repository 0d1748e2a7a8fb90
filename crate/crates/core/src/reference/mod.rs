//! Ground-truth solutions, error metrics and Jacobian diagnostics.

mod diagnostics;
mod solver;

use serde::{Deserialize, Serialize};

pub use diagnostics::{column_correlation, direct_fit_residual, jacobian_spectrum, ColumnCorrelation, DirectFitEntry};
pub use solver::{max_stable_dt, solve_reference, solve_reference_from, ReferenceSolution};

use crate::error::{structure, validation, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub spacetime_rel_l2: f64,
    pub per_time_rel_l2: Vec<f64>,
    pub eval_grid_size: usize,
}

/// Relative L2 errors of `approx` snapshots (taken at `times`, evaluated on
/// the reference grid) against the matching reference snapshots. Norms are
/// plain root sums of squares over grid samples.
pub fn relative_l2(approx: &[Vec<f64>], times: &[f64], reference: &ReferenceSolution) -> Result<ErrorReport> {
    if approx.len() != times.len() {
        return Err(structure("one time per approximate snapshot required"));
    }
    if approx.is_empty() {
        return Err(validation("no snapshots to compare"));
    }
    let size = reference.values[0].len();
    let (mut num, mut den) = (0.0, 0.0);
    let mut per_time = Vec::with_capacity(approx.len());
    for (a, &t) in approx.iter().zip(times) {
        let r = reference
            .at(t)
            .ok_or_else(|| validation(format!("reference has no snapshot at t = {t}")))?;
        if a.len() != r.len() {
            return Err(structure(format!("snapshot at t = {t} has {} values, reference grid {}", a.len(), r.len())));
        }
        let e: f64 = a.iter().zip(r).map(|(x, y)| (x - y) * (x - y)).sum();
        let s: f64 = r.iter().map(|y| y * y).sum();
        per_time.push(if s > 0.0 { (e / s).sqrt() } else { e.sqrt() });
        num += e;
        den += s;
    }
    let spacetime = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(ErrorReport { spacetime_rel_l2: spacetime, per_time_rel_l2: per_time, eval_grid_size: size })
}
