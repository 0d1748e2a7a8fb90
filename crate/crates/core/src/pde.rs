//! Benchmark evolution equations `du/dt = f(x, u)` on periodic domains.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{structure, validation, Result};
use crate::network::{ArchSpec, BatchEval, DerivOrder, EvalBundle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    AllenCahn,
    Burgers,
    Vlasov,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::AllenCahn => "allen_cahn",
            ProblemKind::Burgers => "burgers",
            ProblemKind::Vlasov => "vlasov",
        }
    }
}

/// Reaction term of the Allen-Cahn equation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reaction {
    /// `u - u^3`
    #[default]
    Cubic,
    /// `u`
    Linear,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x < self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub kind: ProblemKind,
    pub domain: Vec<Interval>,
    /// Diffusion coefficient (Allen-Cahn, Burgers).
    pub epsilon: f64,
    pub reaction: Reaction,
    /// Vlasov potential `phi(x) = amplitude * cos(x)`; zero gives free streaming.
    pub field_amplitude: f64,
    pub end_time: f64,
    pub default_dt: f64,
    pub default_rcond: f64,
}

impl PdeProblem {
    pub fn new(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::AllenCahn => Self::allen_cahn(),
            ProblemKind::Burgers => Self::burgers(),
            ProblemKind::Vlasov => Self::vlasov(),
        }
    }

    pub fn allen_cahn() -> Self {
        Self {
            kind: ProblemKind::AllenCahn,
            domain: vec![Interval::new(0.0, TAU)],
            epsilon: 5e-3,
            reaction: Reaction::Cubic,
            field_amplitude: 0.0,
            end_time: 4.0,
            default_dt: 5e-3,
            default_rcond: 1e-4,
        }
    }

    pub fn burgers() -> Self {
        Self {
            kind: ProblemKind::Burgers,
            domain: vec![Interval::new(-1.0, 1.0)],
            epsilon: 1e-3,
            reaction: Reaction::Off,
            field_amplitude: 0.0,
            end_time: 4.0,
            default_dt: 1e-3,
            default_rcond: 1e-4,
        }
    }

    pub fn vlasov() -> Self {
        Self {
            kind: ProblemKind::Vlasov,
            domain: vec![Interval::new(0.0, TAU), Interval::new(-6.0, 6.0)],
            epsilon: 0.0,
            reaction: Reaction::Off,
            field_amplitude: 1.0,
            end_time: 3.0,
            default_dt: 5e-3,
            default_rcond: 1e-5,
        }
    }

    pub fn spatial_dim(&self) -> usize {
        self.domain.len()
    }

    /// Domain lengths, which are also the embedding periods.
    pub fn periods(&self) -> Vec<f64> {
        self.domain.iter().map(Interval::length).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.kind {
            ProblemKind::Vlasov => 2,
            _ => 1,
        };
        if self.domain.len() != expected {
            return Err(validation(format!("{} needs a {expected}-dimensional domain", self.kind.name())));
        }
        if self.domain.iter().any(|iv| !(iv.length() > 0.0)) {
            return Err(validation("domain intervals must be nonempty"));
        }
        if self.kind != ProblemKind::Vlasov && self.epsilon < 0.0 {
            return Err(validation("epsilon must be nonnegative"));
        }
        if !(self.end_time > 0.0) || !(self.default_dt > 0.0) {
            return Err(validation("end_time and default_dt must be positive"));
        }
        steps_for(self.end_time, self.default_dt)?;
        Ok(())
    }

    pub fn initial_condition(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::AllenCahn => {
                let x = x[0];
                (2.0 * x.sin()).tanh() / 3.0 - (-23.5 * (x - FRAC_PI_2).powi(2)).exp()
                    + (-27.0 * (x - 4.2).powi(2)).exp()
                    + (-38.0 * (x - 5.4).powi(2)).exp()
            }
            ProblemKind::Burgers => {
                let x = x[0];
                (1.0 - x * x) * (-30.0 * (x + 0.5).powi(2)).exp()
            }
            ProblemKind::Vlasov => (-0.5 * x[1] * x[1]).exp() / TAU.sqrt(),
        }
    }

    /// Analytic spatial gradient of the initial condition.
    pub fn initial_gradient(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            ProblemKind::AllenCahn => {
                let x = x[0];
                let t = (2.0 * x.sin()).tanh();
                let g1 = -23.5 * (x - FRAC_PI_2).powi(2);
                let g2 = -27.0 * (x - 4.2).powi(2);
                let g3 = -38.0 * (x - 5.4).powi(2);
                vec![
                    (1.0 - t * t) * 2.0 * x.cos() / 3.0 + 47.0 * (x - FRAC_PI_2) * g1.exp()
                        - 54.0 * (x - 4.2) * g2.exp()
                        - 76.0 * (x - 5.4) * g3.exp(),
                ]
            }
            ProblemKind::Burgers => {
                let x = x[0];
                let g = (-30.0 * (x + 0.5).powi(2)).exp();
                vec![(-2.0 * x - (1.0 - x * x) * 60.0 * (x + 0.5)) * g]
            }
            ProblemKind::Vlasov => {
                let v = x[1];
                vec![0.0, -v * (-0.5 * v * v).exp() / TAU.sqrt()]
            }
        }
    }

    /// Derivative order of the network needed to evaluate the right-hand side.
    pub fn required_order(&self) -> DerivOrder {
        match self.kind {
            ProblemKind::Vlasov => DerivOrder::First,
            _ => DerivOrder::Second,
        }
    }

    /// Pointwise right-hand side `f(x, u)` from the network derivatives at `x`.
    pub fn rhs(&self, bundle: &EvalBundle, x: &[f64]) -> Result<f64> {
        let d = self.spatial_dim();
        if bundle.grad_x.len() < d && self.kind != ProblemKind::AllenCahn {
            return Err(structure(format!("{} needs the spatial gradient", self.kind.name())));
        }
        if self.required_order() == DerivOrder::Second && bundle.hess_diag.len() < d {
            return Err(structure(format!("{} needs second spatial derivatives", self.kind.name())));
        }
        let u = bundle.value;
        Ok(match self.kind {
            ProblemKind::AllenCahn => self.epsilon * bundle.hess_diag[0] + self.reaction_term(u),
            ProblemKind::Burgers => self.epsilon * bundle.hess_diag[0] - u * bundle.grad_x[0],
            ProblemKind::Vlasov => {
                -x[1] * bundle.grad_x[0] - self.field_amplitude * x[0].sin() * bundle.grad_x[1]
            }
        })
    }

    fn reaction_term(&self, u: f64) -> f64 {
        match self.reaction {
            Reaction::Cubic => u - u * u * u,
            Reaction::Linear => u,
            Reaction::Off => 0.0,
        }
    }

    /// Right-hand side at every point of a batch evaluated to `required_order`.
    pub fn rhs_batch(&self, eval: &BatchEval<'_>, points: &CollocationSet) -> Result<Vec<f64>> {
        if eval.order() < self.required_order() {
            return Err(structure("batch evaluation lacks the derivatives the equation needs"));
        }
        let u = eval.values();
        Ok(match self.kind {
            ProblemKind::AllenCahn => {
                let uxx = eval.hess_diag(0);
                u.iter().zip(uxx).map(|(&u, &uxx)| self.epsilon * uxx + self.reaction_term(u)).collect()
            }
            ProblemKind::Burgers => {
                let (ux, uxx) = (eval.grad_x(0), eval.hess_diag(0));
                (0..u.len()).map(|m| self.epsilon * uxx[m] - u[m] * ux[m]).collect()
            }
            ProblemKind::Vlasov => {
                let (ux, uv) = (eval.grad_x(0), eval.grad_x(1));
                (0..u.len())
                    .map(|m| {
                        let p = points.point(m);
                        -p[1] * ux[m] - self.field_amplitude * p[0].sin() * uv[m]
                    })
                    .collect()
            }
        })
    }

    /// `f(theta)`: right-hand side of the network state at each collocation point.
    pub fn rhs_vector(&self, arch: &ArchSpec, theta: &[f64], points: &CollocationSet) -> Result<Vec<f64>> {
        let eval = BatchEval::new(arch, theta, points, self.required_order())?;
        self.rhs_batch(&eval, points)
    }

    /// Tensor-product equidistant grid over the domain, right endpoints excluded.
    pub fn make_grid(&self, n_per_dim: &[usize]) -> Result<CollocationSet> {
        CollocationSet::equidistant(&self.domain, n_per_dim)
    }
}

/// Number of steps of size `dt` that reach `end_time`, which must be an
/// integer multiple up to a relative `1e-9`.
pub fn steps_for(end_time: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(end_time >= 0.0) {
        return Err(validation("time step must be positive and end time nonnegative"));
    }
    let k = (end_time / dt).round();
    if (k * dt - end_time).abs() > 1e-9 * end_time.max(dt) {
        return Err(validation(format!("dt = {dt} does not divide the end time {end_time}")));
    }
    Ok(k as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScheme {
    EquidistantGrid,
    Scattered,
}

/// Spatial sample points, row-major `n x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    points: Vec<f64>,
    dim: usize,
    scheme: GridScheme,
    /// Per-dimension counts and spacings for tensor grids (last dimension fastest).
    shape: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
}

impl CollocationSet {
    pub fn equidistant(domain: &[Interval], n_per_dim: &[usize]) -> Result<Self> {
        if n_per_dim.len() != domain.len() {
            return Err(validation(format!(
                "{} grid counts given for a {}-dimensional domain",
                n_per_dim.len(),
                domain.len()
            )));
        }
        if let Some(c) = n_per_dim.iter().find(|&&c| c < 2) {
            return Err(validation(format!("grid count {c} is below 2")));
        }
        let d = domain.len();
        let spacing: Vec<f64> = domain.iter().zip(n_per_dim).map(|(iv, &c)| iv.length() / c as f64).collect();
        let total: usize = n_per_dim.iter().product();
        let mut points = Vec::with_capacity(total * d);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            for i in 0..d {
                points.push(domain[i].lo + idx[i] as f64 * spacing[i]);
            }
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < n_per_dim[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        Ok(Self {
            points,
            dim: d,
            scheme: GridScheme::EquidistantGrid,
            shape: n_per_dim.to_vec(),
            spacing,
            origin: domain.iter().map(|iv| iv.lo).collect(),
        })
    }

    /// Unstructured points (row-major `n x dim`).
    pub fn scattered(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(structure("point buffer length is not a multiple of the dimension"));
        }
        Ok(Self { points, dim, scheme: GridScheme::Scattered, shape: vec![], spacing: vec![], origin: vec![] })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scheme(&self) -> GridScheme {
        self.scheme
    }

    pub fn point(&self, m: usize) -> &[f64] {
        &self.points[m * self.dim..(m + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Per-dimension counts of a tensor grid, empty for scattered sets.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    /// Every `stride`-th node along each dimension of a tensor grid.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if self.scheme != GridScheme::EquidistantGrid || stride == 0 {
            return Err(validation("only tensor grids can be subsampled, with a positive stride"));
        }
        if self.shape.iter().any(|&c| c % stride != 0) {
            return Err(validation(format!("stride {stride} does not divide the grid shape {:?}", self.shape)));
        }
        let domain: Vec<Interval> = self
            .origin
            .iter()
            .zip(&self.spacing)
            .zip(&self.shape)
            .map(|((&lo, &h), &c)| Interval::new(lo, lo + h * c as f64))
            .collect();
        let counts: Vec<usize> = self.shape.iter().map(|c| c / stride).collect();
        Self::equidistant(&domain, &counts)
    }
}

/// Grid with half-spacing offset, disjoint from the equidistant grid of the same size.
pub fn staggered_grid(domain: &[Interval], n_per_dim: &[usize]) -> Result<CollocationSet> {
    let base = CollocationSet::equidistant(domain, n_per_dim)?;
    let half: Vec<f64> = base.spacing.iter().map(|h| 0.5 * h).collect();
    let d = base.dim;
    let pts = base.points.iter().enumerate().map(|(k, &x)| x + half[k % d]).collect();
    CollocationSet::scattered(pts, d)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::network::{Activation, ParamVector};

    fn bundle(value: f64, grad: Vec<f64>, hess: Vec<f64>) -> EvalBundle {
        EvalBundle { value, grad_x: grad, hess_diag: hess, grad_theta: None }
    }

    #[test]
    fn burgers_initial_condition_peak() {
        let p = PdeProblem::burgers();
        assert_eq!(p.initial_condition(&[-0.5]), 0.75);
    }

    #[test]
    fn vlasov_initial_condition_gaussian_peak() {
        let p = PdeProblem::vlasov();
        for x in [0.0, 1.3, 5.0] {
            assert!((p.initial_condition(&[x, 0.0]) - 0.398_942_280_401_432_7).abs() < 1e-15);
        }
    }

    #[test]
    fn allen_cahn_initial_condition_regression() {
        // Four-term formula evaluated at x = pi/2 in extended precision.
        let p = PdeProblem::allen_cahn();
        let v = p.initial_condition(&[FRAC_PI_2]);
        assert!((v - (-0.678_657_473_308_061)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn initial_gradients_match_finite_differences() {
        for p in [PdeProblem::allen_cahn(), PdeProblem::burgers(), PdeProblem::vlasov()] {
            let x0: Vec<f64> = p.domain.iter().map(|iv| iv.lo + 0.37 * iv.length()).collect();
            let g = p.initial_gradient(&x0);
            for i in 0..x0.len() {
                let h = 1e-6;
                let mut xp = x0.clone();
                let mut xm = x0.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (p.initial_condition(&xp) - p.initial_condition(&xm)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7 * (1.0 + g[i].abs()), "{:?} dim {i}", p.kind);
            }
        }
    }

    #[test]
    fn pointwise_rhs_arithmetic() {
        let ac = PdeProblem::allen_cahn();
        assert_eq!(ac.rhs(&bundle(0.0, vec![0.0], vec![0.0]), &[1.0]).unwrap(), 0.0);
        assert_eq!(ac.rhs(&bundle(1.0, vec![0.0], vec![0.0]), &[1.0]).unwrap(), 0.0);
        assert_eq!(ac.rhs(&bundle(2.0, vec![0.0], vec![0.0]), &[1.0]).unwrap(), -6.0);
        let vl = PdeProblem::vlasov();
        assert_eq!(vl.rhs(&bundle(0.3, vec![0.5, 0.9], vec![]), &[0.0, 2.0]).unwrap(), -1.0);
        let bu = PdeProblem::burgers();
        let f = bu.rhs(&bundle(2.0, vec![0.5], vec![3.0]), &[0.1]).unwrap();
        assert!((f - (1e-3 * 3.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn missing_derivatives_are_structural_errors() {
        let bu = PdeProblem::burgers();
        assert!(matches!(bu.rhs(&bundle(1.0, vec![], vec![]), &[0.0]), Err(crate::Error::Structure(_))));
        let ac = PdeProblem::allen_cahn();
        assert!(matches!(ac.rhs(&bundle(1.0, vec![0.0], vec![]), &[0.0]), Err(crate::Error::Structure(_))));
    }

    fn constant_network(problem: &PdeProblem, c: f64) -> (ArchSpec, ParamVector) {
        let arch = ArchSpec::new(problem.periods(), 5, 3, Activation::Rational32);
        let mut theta = ParamVector::init(&arch, 3);
        theta.block_mut("out.weight").unwrap().fill(0.0);
        theta.block_mut("out.bias").unwrap()[0] = c;
        (arch, theta)
    }

    #[test]
    fn rhs_vector_of_constant_network() {
        let c = 0.7;
        for problem in [PdeProblem::allen_cahn(), PdeProblem::burgers(), PdeProblem::vlasov()] {
            let (arch, theta) = constant_network(&problem, c);
            let counts = vec![8; problem.spatial_dim()];
            let grid = problem.make_grid(&counts).unwrap();
            let f = problem.rhs_vector(&arch, theta.values(), &grid).unwrap();
            let expected = if problem.kind == ProblemKind::AllenCahn { c - c * c * c } else { 0.0 };
            assert!(f.iter().all(|&v| (v - expected).abs() < 1e-15), "{:?}", problem.kind);
        }
    }

    #[test]
    fn grids_exclude_right_endpoint() {
        let ac = PdeProblem::allen_cahn().make_grid(&[4]).unwrap();
        let expected = [0.0, FRAC_PI_2, PI, 1.5 * PI];
        for (p, e) in ac.iter().zip(expected) {
            assert!((p[0] - e).abs() < 1e-15);
        }
        let bu = PdeProblem::burgers().make_grid(&[4]).unwrap();
        assert_eq!(bu.as_slice(), &[-1.0, -0.5, 0.0, 0.5]);
        let vl = PdeProblem::vlasov().make_grid(&[10, 10]).unwrap();
        assert_eq!(vl.len(), 100);
        assert!((vl.spacing()[0] - TAU / 10.0).abs() < 1e-15);
        assert!((vl.spacing()[1] - 1.2).abs() < 1e-15);
        let dom = PdeProblem::vlasov().domain;
        assert!(vl.iter().all(|p| dom[0].contains(p[0]) && dom[1].contains(p[1])));
    }

    #[test]
    fn grid_spacing_is_uniform() {
        let g = PdeProblem::burgers().make_grid(&[1000]).unwrap();
        let h = g.spacing()[0];
        for w in g.as_slice().windows(2) {
            assert!(((w[1] - w[0]) - h).abs() < 1e-12 * h.max(1.0));
        }
    }

    #[test]
    fn grid_counts_below_two_rejected() {
        assert!(PdeProblem::burgers().make_grid(&[1]).is_err());
        assert!(PdeProblem::vlasov().make_grid(&[4]).is_err());
    }

    #[test]
    fn default_time_steps_divide_end_times() {
        for p in [PdeProblem::allen_cahn(), PdeProblem::burgers(), PdeProblem::vlasov()] {
            p.validate().unwrap();
        }
        assert_eq!(steps_for(4.0, 1e-3).unwrap(), 4000);
        assert!(steps_for(1.0, 0.3).is_err());
    }
}
