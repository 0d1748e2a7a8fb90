//! Batched evaluation of the periodic-embedding MLP.
//!
//! Points are processed together so every affine layer is one matrix product.
//! Spatial derivatives are carried as forward-mode tangent channels stacked
//! under the value channel: rows `[0, n)` hold values, rows `[(1+i)n, (2+i)n)`
//! hold `d/dx_i`, and with second order rows `[(1+d+i)n, (2+d+i)n)` hold
//! `d^2/dx_i^2`. Parameter derivatives are obtained by a reverse sweep over the
//! value and first-derivative channels.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};

use super::activation::{self, Activation, RATIONAL_COEFFS};
use super::ArchSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DerivOrder {
    Value,
    First,
    Second,
}

#[derive(Clone, Debug)]
pub(crate) struct HiddenOffsets {
    pub weight: usize,
    pub bias: usize,
    pub act: usize,
}

/// Offsets of every parameter group in the flat vector.
#[derive(Clone, Debug)]
pub(crate) struct Offsets {
    pub amp: usize,
    pub phase: usize,
    pub shift: usize,
    pub hidden: Vec<HiddenOffsets>,
    pub out_weight: usize,
    pub out_bias: usize,
}

impl Offsets {
    pub fn new(arch: &ArchSpec) -> Self {
        let (d, w) = (arch.input_dim, arch.hidden_width);
        let ncoef = arch.activation.num_coeffs();
        let amp = 0;
        let phase = amp + w * d;
        let shift = phase + w * d;
        let mut next = shift + w * d;
        let mut hidden = Vec::with_capacity(arch.num_hidden_layers.saturating_sub(1));
        for _ in 1..arch.num_hidden_layers {
            let weight = next;
            let bias = weight + w * w;
            let act = bias + w;
            next = act + ncoef;
            hidden.push(HiddenOffsets { weight, bias, act });
        }
        let out_weight = next;
        let out_bias = out_weight + w;
        Self { amp, phase, shift, hidden, out_weight, out_bias }
    }
}

/// Role of a single parameter index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Site {
    Amp { unit: usize, dim: usize },
    Phase { unit: usize, dim: usize },
    Shift { unit: usize, dim: usize },
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
    Act { layer: usize, coef: usize },
    OutWeight { unit: usize },
    OutBias,
}

impl Offsets {
    pub fn locate(&self, arch: &ArchSpec, k: usize) -> Site {
        let (d, w) = (arch.input_dim, arch.hidden_width);
        if k < self.phase {
            let r = k - self.amp;
            return Site::Amp { unit: r / d, dim: r % d };
        }
        if k < self.shift {
            let r = k - self.phase;
            return Site::Phase { unit: r / d, dim: r % d };
        }
        if k < self.shift + w * d {
            let r = k - self.shift;
            return Site::Shift { unit: r / d, dim: r % d };
        }
        if k >= self.out_bias {
            return Site::OutBias;
        }
        if k >= self.out_weight {
            return Site::OutWeight { unit: k - self.out_weight };
        }
        // Hidden blocks are equal-sized, so the layer follows from the offset.
        let first = self.shift + w * d;
        let stride = w * w + w + arch.activation.num_coeffs();
        let layer = (k - first) / stride;
        let h = &self.hidden[layer];
        if k < h.bias {
            let r = k - h.weight;
            Site::Weight { layer, row: r / w, col: r % w }
        } else if k < h.act {
            Site::Bias { layer, row: k - h.bias }
        } else {
            Site::Act { layer, coef: k - h.act }
        }
    }
}

/// Forward pass over a batch of points with all intermediates kept for the
/// reverse sweep.
pub(crate) struct Tape<'a> {
    arch: &'a ArchSpec,
    theta: &'a [f64],
    offs: Offsets,
    n: usize,
    nch: usize,
    order: DerivOrder,
    /// cos/sin of the embedding phase, indexed `(unit * d + dim) * n + m`.
    cos: Vec<f64>,
    sin: Vec<f64>,
    /// Post-activations: level 0 is the embedding, level `l` the `l`-th hidden layer.
    acts: Vec<Mat<f64>>,
    /// Pre-activations of the hidden layers (all channels).
    pre: Vec<Mat<f64>>,
    /// Activation first and second derivative at the value channel.
    s1: Vec<Mat<f64>>,
    s2: Vec<Mat<f64>>,
    out: Vec<f64>,
}

impl<'a> Tape<'a> {
    /// `points` is row-major `n x d`. Callers validate shapes.
    pub fn forward(arch: &'a ArchSpec, theta: &'a [f64], points: &[f64], order: DerivOrder) -> Self {
        let d = arch.input_dim;
        let w = arch.hidden_width;
        let n = points.len() / d;
        let nch = match order {
            DerivOrder::Value => 1,
            DerivOrder::First => 1 + d,
            DerivOrder::Second => 1 + 2 * d,
        };
        let offs = Offsets::new(arch);
        let omega: Vec<f64> = arch.periods.iter().map(|p| std::f64::consts::TAU / p).collect();

        let mut cos = vec![0.0; w * d * n];
        let mut sin = vec![0.0; w * d * n];
        let mut emb = Mat::<f64>::zeros(nch * n, w);
        for j in 0..w {
            let col = emb.col_as_slice_mut(j);
            for i in 0..d {
                let idx = j * d + i;
                let a = theta[offs.amp + idx];
                let phi = theta[offs.phase + idx];
                let b = theta[offs.shift + idx];
                let cs = &mut cos[idx * n..(idx + 1) * n];
                let sn = &mut sin[idx * n..(idx + 1) * n];
                for m in 0..n {
                    let arg = omega[i] * points[m * d + i] + phi;
                    let (s, c) = arg.sin_cos();
                    cs[m] = c;
                    sn[m] = s;
                    col[m] += a * c + b;
                    if nch > 1 {
                        col[(1 + i) * n + m] = -a * omega[i] * s;
                    }
                    if order == DerivOrder::Second {
                        col[(1 + d + i) * n + m] = -a * omega[i] * omega[i] * c;
                    }
                }
            }
        }

        let nhid = offs.hidden.len();
        let mut acts = Vec::with_capacity(nhid + 1);
        let mut pre = Vec::with_capacity(nhid);
        let mut s1 = Vec::with_capacity(nhid);
        let mut s2 = Vec::with_capacity(nhid);
        acts.push(emb);
        let ncoef = arch.activation.num_coeffs();
        for h in &offs.hidden {
            let weight = MatRef::from_row_major_slice(&theta[h.weight..h.weight + w * w], w, w);
            let bias = &theta[h.bias..h.bias + w];
            let coeffs = &theta[h.act..h.act + ncoef];
            let prev = acts.last().expect("embedding level present");
            let mut z = Mat::<f64>::zeros(nch * n, w);
            matmul(z.as_mut(), Accum::Replace, prev.as_ref(), weight.transpose(), 1.0, Par::Seq);
            let mut a = Mat::<f64>::zeros(nch * n, w);
            let mut d1m = Mat::<f64>::zeros(n, w);
            let mut d2m = Mat::<f64>::zeros(n, w);
            for j in 0..w {
                let zc = z.col_as_slice_mut(j);
                for v in &mut zc[..n] {
                    *v += bias[j];
                }
                let zc = z.col_as_slice(j);
                let ac = a.col_as_slice_mut(j);
                let d1c = d1m.col_as_slice_mut(j);
                let d2c = d2m.col_as_slice_mut(j);
                for m in 0..n {
                    let e = activation::eval(arch.activation, coeffs, zc[m]);
                    ac[m] = e.v;
                    d1c[m] = e.d1;
                    d2c[m] = e.d2;
                    for i in 0..nch.min(1 + d) - 1 {
                        ac[(1 + i) * n + m] = e.d1 * zc[(1 + i) * n + m];
                    }
                    if order == DerivOrder::Second {
                        for i in 0..d {
                            let z1 = zc[(1 + i) * n + m];
                            let z2 = zc[(1 + d + i) * n + m];
                            ac[(1 + d + i) * n + m] = e.d2 * z1 * z1 + e.d1 * z2;
                        }
                    }
                }
            }
            pre.push(z);
            s1.push(d1m);
            s2.push(d2m);
            acts.push(a);
        }

        let last = acts.last().expect("at least the embedding level");
        let mut out = vec![0.0; nch * n];
        for j in 0..w {
            let v = theta[offs.out_weight + j];
            for (o, &h) in out.iter_mut().zip(last.col_as_slice(j)) {
                *o += v * h;
            }
        }
        let c = theta[offs.out_bias];
        for o in &mut out[..n] {
            *o += c;
        }

        Self { arch, theta, offs, n, nch, order, cos, sin, acts, pre, s1, s2, out }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> DerivOrder {
        self.order
    }

    pub fn values(&self) -> &[f64] {
        &self.out[..self.n]
    }

    /// `d u / d x_dim` at every point. Requires first order.
    pub fn first(&self, dim: usize) -> &[f64] {
        assert!(self.order >= DerivOrder::First);
        &self.out[(1 + dim) * self.n..(2 + dim) * self.n]
    }

    /// `d^2 u / d x_dim^2` at every point. Requires second order.
    pub fn second(&self, dim: usize) -> &[f64] {
        assert!(self.order == DerivOrder::Second);
        let d = self.arch.input_dim;
        &self.out[(1 + d + dim) * self.n..(2 + d + dim) * self.n]
    }

    /// Reverse sweep for output cotangents: `alpha` on the value channel and,
    /// optionally, `beta` (dimension-major `d x n`) on the first-derivative
    /// channels.
    pub fn pullback(&self, alpha: &[f64], beta: Option<&[f64]>) -> Pullback<'_> {
        let arch = self.arch;
        let (n, d, w) = (self.n, arch.input_dim, arch.hidden_width);
        let nb = if beta.is_some() { 1 + d } else { 1 };
        assert!(nb <= self.nch, "first-derivative cotangents need a first-order tape");
        assert_eq!(alpha.len(), n);

        let cot = |ch: usize, m: usize| -> f64 {
            if ch == 0 {
                alpha[m]
            } else {
                beta.map_or(0.0, |b| b[(ch - 1) * n + m])
            }
        };
        let mut hbar = Mat::<f64>::zeros(nb * n, w);
        for j in 0..w {
            let v = self.theta[self.offs.out_weight + j];
            let col = hbar.col_as_slice_mut(j);
            for ch in 0..nb {
                for m in 0..n {
                    col[ch * n + m] = cot(ch, m) * v;
                }
            }
        }

        let ncoef = arch.activation.num_coeffs();
        let nhid = self.offs.hidden.len();
        let mut zbar: Vec<Mat<f64>> = Vec::with_capacity(nhid);
        let mut coef: Vec<Mat<f64>> = Vec::with_capacity(nhid);
        let mut dv = [0.0; RATIONAL_COEFFS];
        let mut dd1 = [0.0; RATIONAL_COEFFS];
        for l in (0..nhid).rev() {
            let h = &self.offs.hidden[l];
            let coeffs = &self.theta[h.act..h.act + ncoef];
            let z = &self.pre[l];
            let (s1, s2) = (&self.s1[l], &self.s2[l]);
            let mut zb = Mat::<f64>::zeros(nb * n, w);
            let mut cb = Mat::<f64>::zeros(n, ncoef);
            for j in 0..w {
                let hc = hbar.col_as_slice(j);
                let zc = z.col_as_slice(j);
                let s1c = s1.col_as_slice(j);
                let s2c = s2.col_as_slice(j);
                let zbc = zb.col_as_slice_mut(j);
                for m in 0..n {
                    let mut acc = hc[m] * s1c[m];
                    for i in 0..nb - 1 {
                        let r = (1 + i) * n + m;
                        acc += hc[r] * s2c[m] * zc[r];
                        zbc[r] = hc[r] * s1c[m];
                    }
                    zbc[m] = acc;
                }
                if arch.activation == Activation::Rational32 {
                    for m in 0..n {
                        activation::coeff_sensitivities(coeffs, zc[m], &mut dv, &mut dd1);
                        let mut tang = 0.0;
                        for i in 0..nb - 1 {
                            let r = (1 + i) * n + m;
                            tang += hc[r] * zc[r];
                        }
                        for k in 0..ncoef {
                            cb[(m, k)] += hc[m] * dv[k] + tang * dd1[k];
                        }
                    }
                }
            }
            let weight = MatRef::from_row_major_slice(&self.theta[h.weight..h.weight + w * w], w, w);
            let mut prev = Mat::<f64>::zeros(nb * n, w);
            matmul(prev.as_mut(), Accum::Replace, zb.as_ref(), weight, 1.0, Par::Seq);
            hbar = prev;
            zbar.push(zb);
            coef.push(cb);
        }
        zbar.reverse();
        coef.reverse();

        Pullback { tape: self, nb, alpha: alpha.to_vec(), beta: beta.map(<[f64]>::to_vec), zbar, coef, ybar: hbar }
    }
}

/// Adjoints of a reverse sweep; yields per-point derivatives of the
/// cotangent-weighted outputs with respect to any parameter.
pub(crate) struct Pullback<'t> {
    tape: &'t Tape<'t>,
    nb: usize,
    alpha: Vec<f64>,
    beta: Option<Vec<f64>>,
    zbar: Vec<Mat<f64>>,
    coef: Vec<Mat<f64>>,
    ybar: Mat<f64>,
}

impl Pullback<'_> {
    /// Writes the derivative with respect to parameter `k` at every point.
    pub fn column(&self, k: usize, out: &mut [f64]) {
        let t = self.tape;
        let arch = t.arch;
        let (n, d) = (t.n, arch.input_dim);
        let nb = self.nb;
        match t.offs.locate(arch, k) {
            Site::Amp { unit, dim } => {
                let idx = unit * d + dim;
                let cs = &t.cos[idx * n..(idx + 1) * n];
                let sn = &t.sin[idx * n..(idx + 1) * n];
                let yb = self.ybar.col_as_slice(unit);
                let omega = std::f64::consts::TAU / arch.periods[dim];
                for m in 0..n {
                    let mut g = yb[m] * cs[m];
                    if nb > 1 {
                        g -= yb[(1 + dim) * n + m] * omega * sn[m];
                    }
                    out[m] = g;
                }
            }
            Site::Phase { unit, dim } => {
                let idx = unit * d + dim;
                let a = t.theta[t.offs.amp + idx];
                let cs = &t.cos[idx * n..(idx + 1) * n];
                let sn = &t.sin[idx * n..(idx + 1) * n];
                let yb = self.ybar.col_as_slice(unit);
                let omega = std::f64::consts::TAU / arch.periods[dim];
                for m in 0..n {
                    let mut g = -yb[m] * a * sn[m];
                    if nb > 1 {
                        g -= yb[(1 + dim) * n + m] * a * omega * cs[m];
                    }
                    out[m] = g;
                }
            }
            Site::Shift { unit, .. } => {
                out.copy_from_slice(&self.ybar.col_as_slice(unit)[..n]);
            }
            Site::Weight { layer, row, col } => {
                let zb = self.zbar[layer].col_as_slice(row);
                let h = t.acts[layer].col_as_slice(col);
                for m in 0..n {
                    out[m] = zb[m] * h[m];
                }
                for ch in 1..nb {
                    for m in 0..n {
                        out[m] += zb[ch * n + m] * h[ch * n + m];
                    }
                }
            }
            Site::Bias { layer, row } => {
                out.copy_from_slice(&self.zbar[layer].col_as_slice(row)[..n]);
            }
            Site::Act { layer, coef } => {
                out.copy_from_slice(self.coef[layer].col_as_slice(coef));
            }
            Site::OutWeight { unit } => {
                let h = t.acts.last().expect("levels").col_as_slice(unit);
                for m in 0..n {
                    out[m] = self.alpha[m] * h[m];
                }
                if let Some(beta) = &self.beta {
                    for i in 0..d {
                        for m in 0..n {
                            out[m] += beta[i * n + m] * h[(1 + i) * n + m];
                        }
                    }
                }
            }
            Site::OutBias => out.copy_from_slice(&self.alpha),
        }
    }

    /// Per-point derivative matrix (`n x cols.len()`) for the given parameter indices.
    pub fn columns(&self, cols: &[usize]) -> Mat<f64> {
        let mut jac = Mat::<f64>::zeros(self.tape.n, cols.len());
        for (c, &k) in cols.iter().enumerate() {
            self.column(k, jac.col_as_slice_mut(c));
        }
        jac
    }

    pub fn full(&self) -> Mat<f64> {
        let p = self.tape.arch.num_params();
        let mut jac = Mat::<f64>::zeros(self.tape.n, p);
        for k in 0..p {
            self.column(k, jac.col_as_slice_mut(k));
        }
        jac
    }

    /// Derivatives summed over points, length `p`.
    pub fn summed(&self) -> Vec<f64> {
        let p = self.tape.arch.num_params();
        let mut buf = vec![0.0; self.tape.n];
        (0..p)
            .map(|k| {
                self.column(k, &mut buf);
                buf.iter().sum()
            })
            .collect()
    }
}
