//! Feed-forward surrogate `u(x; theta)` with a periodic embedding input layer.
//!
//! Layer stack: a periodic embedding of width `w`
//! (`y_j = sum_i a_ji cos(2 pi x_i / P_i + phi_ji) + b_ji`), then
//! `num_hidden_layers - 1` affine layers of width `w` each followed by an
//! activation, then an affine read-out to a scalar without activation.
//! Spatial derivatives (first and diagonal second) are propagated exactly in
//! forward mode; parameter gradients come from a reverse sweep over the same
//! batched tape.

mod activation;
mod params;
mod tape;

use faer::Mat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use activation::{Activation, DENOM_FLOOR, RATIONAL_COEFFS, RELU_RATIONAL_INIT};
pub use params::{LayerBlock, ParamLayout, ParamVector};
pub use tape::DerivOrder;

pub(crate) use tape::Tape;

use crate::error::{structure, validation, Result};
use crate::pde::CollocationSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden_width: usize,
    /// Embedding layer plus hidden affine layers; a network with `k` layers in
    /// total (counting the read-out) has `k - 1` here.
    pub num_hidden_layers: usize,
    pub periods: Vec<f64>,
    pub activation: Activation,
}

impl ArchSpec {
    pub fn new(periods: Vec<f64>, hidden_width: usize, num_hidden_layers: usize, activation: Activation) -> Self {
        Self { input_dim: periods.len(), hidden_width, num_hidden_layers, periods, activation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(validation("input_dim must be positive"));
        }
        if self.hidden_width == 0 {
            return Err(validation("hidden_width must be positive"));
        }
        if self.num_hidden_layers == 0 {
            return Err(validation("num_hidden_layers must be at least 1"));
        }
        if self.periods.len() != self.input_dim {
            return Err(validation(format!(
                "{} periods given for input dimension {}",
                self.periods.len(),
                self.input_dim
            )));
        }
        if let Some(p) = self.periods.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(validation(format!("period {p} is not positive")));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (d, w) = (self.input_dim, self.hidden_width);
        3 * w * d + (self.num_hidden_layers - 1) * (w * w + w + self.activation.num_coeffs()) + w + 1
    }

    pub fn layout(&self) -> ParamLayout {
        let (d, w) = (self.input_dim, self.hidden_width);
        let mut shapes = vec![
            ("embed.amp".to_string(), w, d),
            ("embed.phase".to_string(), w, d),
            ("embed.shift".to_string(), w, d),
        ];
        for l in 1..self.num_hidden_layers {
            shapes.push((format!("hidden{l}.weight"), w, w));
            shapes.push((format!("hidden{l}.bias"), w, 1));
            if self.activation.num_coeffs() > 0 {
                shapes.push((format!("hidden{l}.act"), 1, self.activation.num_coeffs()));
            }
        }
        shapes.push(("out.weight".to_string(), 1, w));
        shapes.push(("out.bias".to_string(), 1, 1));
        ParamLayout::from_shapes(shapes)
    }

    /// Stable content hash (hex) used to key cached parameter files.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("arch spec serializes");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }

    /// Index of the read-out bias, whose gradient is identically one.
    pub fn output_bias_index(&self) -> usize {
        self.num_params() - 1
    }

    pub(crate) fn check_theta(&self, theta: &[f64]) -> Result<()> {
        self.validate()?;
        if theta.len() != self.num_params() {
            return Err(structure(format!(
                "parameter vector has length {} but the architecture needs {}",
                theta.len(),
                self.num_params()
            )));
        }
        Ok(())
    }

    fn check_params(&self, theta: &ParamVector) -> Result<()> {
        self.check_theta(theta.values())?;
        if *theta.layout() != self.layout() {
            return Err(structure("parameter layout does not match the architecture"));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(structure(format!("point has dimension {}, expected {}", x.len(), self.input_dim)));
        }
        Ok(())
    }
}

/// Network output and derivatives at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBundle {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub hess_diag: Vec<f64>,
    pub grad_theta: Option<Vec<f64>>,
}

pub(crate) fn check_indices(indices: &[usize], p: usize) -> Result<()> {
    for (pos, &k) in indices.iter().enumerate() {
        if k >= p {
            return Err(validation(format!("index {k} out of range for {p} parameters")));
        }
        if pos > 0 && indices[pos - 1] >= k {
            return Err(validation(format!("indices not strictly increasing at position {pos}")));
        }
    }
    Ok(())
}

pub fn forward(arch: &ArchSpec, theta: &ParamVector, x: &[f64]) -> Result<f64> {
    arch.check_params(theta)?;
    arch.check_point(x)?;
    Ok(Tape::forward(arch, theta.values(), x, DerivOrder::Value).values()[0])
}

/// Value, spatial gradient and diagonal of the spatial Hessian at `x`.
pub fn spatial_derivs(arch: &ArchSpec, theta: &ParamVector, x: &[f64]) -> Result<EvalBundle> {
    arch.check_params(theta)?;
    arch.check_point(x)?;
    let tape = Tape::forward(arch, theta.values(), x, DerivOrder::Second);
    let d = arch.input_dim;
    Ok(EvalBundle {
        value: tape.values()[0],
        grad_x: (0..d).map(|i| tape.first(i)[0]).collect(),
        hess_diag: (0..d).map(|i| tape.second(i)[0]).collect(),
        grad_theta: None,
    })
}

/// `d u(x; theta) / d theta_k`, for all `k` or only the given strictly
/// increasing indices.
pub fn param_gradient(arch: &ArchSpec, theta: &ParamVector, x: &[f64], indices: Option<&[usize]>) -> Result<Vec<f64>> {
    arch.check_params(theta)?;
    arch.check_point(x)?;
    if let Some(idx) = indices {
        check_indices(idx, arch.num_params())?;
    }
    let tape = Tape::forward(arch, theta.values(), x, DerivOrder::Value);
    let pb = tape.pullback(&[1.0], None);
    let jac = match indices {
        Some(idx) => pb.columns(idx),
        None => pb.full(),
    };
    Ok((0..jac.ncols()).map(|c| jac[(0, c)]).collect())
}

/// Batch Jacobian with one row per collocation point.
pub fn batch_jacobian(
    arch: &ArchSpec,
    theta: &ParamVector,
    points: &CollocationSet,
    indices: Option<&[usize]>,
) -> Result<Mat<f64>> {
    arch.check_params(theta)?;
    let eval = BatchEval::new(arch, theta.values(), points, DerivOrder::Value)?;
    match indices {
        Some(idx) => {
            check_indices(idx, arch.num_params())?;
            Ok(eval.jacobian_columns(idx))
        }
        None => Ok(eval.jacobian()),
    }
}

/// Network evaluated on a whole collocation set; the basis for assembling
/// Galerkin systems and fitting losses without repeating the forward pass.
pub struct BatchEval<'a> {
    arch: &'a ArchSpec,
    tape: Tape<'a>,
}

impl<'a> BatchEval<'a> {
    pub fn new(arch: &'a ArchSpec, theta: &'a [f64], points: &CollocationSet, order: DerivOrder) -> Result<Self> {
        arch.check_theta(theta)?;
        if points.dim() != arch.input_dim {
            return Err(structure(format!(
                "collocation points have dimension {}, network expects {}",
                points.dim(),
                arch.input_dim
            )));
        }
        if points.is_empty() {
            return Err(validation("collocation set is empty"));
        }
        Ok(Self { arch, tape: Tape::forward(arch, theta, points.as_slice(), order) })
    }

    pub fn len(&self) -> usize {
        self.tape.n()
    }

    pub fn is_empty(&self) -> bool {
        self.tape.n() == 0
    }

    pub fn values(&self) -> &[f64] {
        self.tape.values()
    }

    pub fn grad_x(&self, dim: usize) -> &[f64] {
        self.tape.first(dim)
    }

    pub fn hess_diag(&self, dim: usize) -> &[f64] {
        self.tape.second(dim)
    }

    pub fn order(&self) -> DerivOrder {
        self.tape.order()
    }

    pub fn bundle(&self, m: usize) -> EvalBundle {
        let d = self.arch.input_dim;
        let order = self.tape.order();
        EvalBundle {
            value: self.tape.values()[m],
            grad_x: if order >= DerivOrder::First { (0..d).map(|i| self.tape.first(i)[m]).collect() } else { vec![] },
            hess_diag: if order == DerivOrder::Second {
                (0..d).map(|i| self.tape.second(i)[m]).collect()
            } else {
                vec![]
            },
            grad_theta: None,
        }
    }

    pub fn jacobian(&self) -> Mat<f64> {
        let ones = vec![1.0; self.tape.n()];
        self.tape.pullback(&ones, None).full()
    }

    /// Selected Jacobian columns. Indices are only range-checked here, so
    /// repeated indices yield repeated columns.
    pub fn jacobian_columns(&self, cols: &[usize]) -> Mat<f64> {
        let ones = vec![1.0; self.tape.n()];
        self.tape.pullback(&ones, None).columns(cols)
    }

    /// Jacobian of `d u / d x_dim` with respect to all parameters.
    pub fn derivative_jacobian(&self, dim: usize) -> Mat<f64> {
        let n = self.tape.n();
        let d = self.arch.input_dim;
        let alpha = vec![0.0; n];
        let mut beta = vec![0.0; d * n];
        beta[dim * n..(dim + 1) * n].fill(1.0);
        self.tape.pullback(&alpha, Some(&beta)).full()
    }

    /// Gradient with respect to theta of
    /// `sum_m alpha_m u(x_m) + sum_{m,i} beta_{i,m} d u(x_m) / d x_i`.
    /// `beta` is dimension-major (`d x n`).
    pub fn vjp(&self, alpha: &[f64], beta: Option<&[f64]>) -> Vec<f64> {
        self.tape.pullback(alpha, beta).summed()
    }
}
