use serde::{Deserialize, Serialize};

/// Learnable coefficients of a type-(3,2) rational activation:
/// `[c0, c1, c2, c3, d0, d1, d2]` for `(c0 + c1 z + c2 z^2 + c3 z^3) / (d0 + d1 z + d2 z^2)`.
pub const RATIONAL_COEFFS: usize = 7;

/// Type-(3,2) best rational approximation of ReLU on `[-1, 1]`, the standard
/// starting point for rational networks.
pub const RELU_RATIONAL_INIT: [f64; RATIONAL_COEFFS] = [0.0218, 0.5, 1.5957, 1.1915, 1.0, 0.0, 2.383];

/// Denominators smaller than this in magnitude are clamped.
pub const DENOM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[serde(rename = "rational_3_2")]
    Rational32,
    Tanh,
}

impl Activation {
    /// Learnable coefficients per hidden layer.
    pub fn num_coeffs(self) -> usize {
        match self {
            Activation::Rational32 => RATIONAL_COEFFS,
            Activation::Tanh => 0,
        }
    }

    pub fn initial_coeffs(self) -> &'static [f64] {
        match self {
            Activation::Rational32 => &RELU_RATIONAL_INIT,
            Activation::Tanh => &[],
        }
    }
}

/// Activation value with its first and second derivative.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ActEval {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

#[inline]
fn clamp_denominator(q: f64) -> f64 {
    if q.abs() < DENOM_FLOOR {
        if q < 0.0 {
            -DENOM_FLOOR
        } else {
            DENOM_FLOOR
        }
    } else {
        q
    }
}

#[inline]
pub(crate) fn eval(act: Activation, coeffs: &[f64], z: f64) -> ActEval {
    match act {
        Activation::Tanh => {
            let v = z.tanh();
            let d1 = 1.0 - v * v;
            ActEval { v, d1, d2: -2.0 * v * d1 }
        }
        Activation::Rational32 => {
            let (c0, c1, c2, c3) = (coeffs[0], coeffs[1], coeffs[2], coeffs[3]);
            let (e0, e1, e2) = (coeffs[4], coeffs[5], coeffs[6]);
            let p = c0 + z * (c1 + z * (c2 + z * c3));
            let dp = c1 + z * (2.0 * c2 + 3.0 * c3 * z);
            let ddp = 2.0 * c2 + 6.0 * c3 * z;
            let q = clamp_denominator(e0 + z * (e1 + z * e2));
            let dq = e1 + 2.0 * e2 * z;
            let ddq = 2.0 * e2;
            let v = p / q;
            let d1 = (dp - v * dq) / q;
            let d2 = (ddp - 2.0 * d1 * dq - v * ddq) / q;
            ActEval { v, d1, d2 }
        }
    }
}

/// Sensitivities of the activation value (`dv`) and its first derivative
/// (`dd1`) with respect to each rational coefficient at `z`.
#[inline]
pub(crate) fn coeff_sensitivities(
    coeffs: &[f64],
    z: f64,
    dv: &mut [f64; RATIONAL_COEFFS],
    dd1: &mut [f64; RATIONAL_COEFFS],
) {
    let (c0, c1, c2, c3) = (coeffs[0], coeffs[1], coeffs[2], coeffs[3]);
    let (e0, e1, e2) = (coeffs[4], coeffs[5], coeffs[6]);
    let p = c0 + z * (c1 + z * (c2 + z * c3));
    let dp = c1 + z * (2.0 * c2 + 3.0 * c3 * z);
    let q = clamp_denominator(e0 + z * (e1 + z * e2));
    let dq = e1 + 2.0 * e2 * z;
    let r = p / q;
    let r1 = (dp - r * dq) / q;
    let powers = [1.0, z, z * z, z * z * z];
    let dpowers = [0.0, 1.0, 2.0 * z, 3.0 * z * z];
    for k in 0..4 {
        dv[k] = powers[k] / q;
        dd1[k] = (dpowers[k] - dv[k] * dq) / q;
    }
    for k in 0..3 {
        dv[4 + k] = -r * powers[k] / q;
        dd1[4 + k] = (r * powers[k] / q * dq - r * dpowers[k] - r1 * powers[k]) / q;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_init_tracks_relu_on_unit_interval() {
        for &(z, relu) in &[(-1.0, 0.0), (-0.5, 0.0), (0.0, 0.0), (0.5, 0.5), (1.0, 1.0)] {
            let v = eval(Activation::Rational32, &RELU_RATIONAL_INIT, z).v;
            assert!((v - relu).abs() < 0.05, "r({z}) = {v}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let coeffs = [0.1, 0.7, -0.3, 0.9, 1.2, 0.2, 0.8];
        for act in [Activation::Rational32, Activation::Tanh] {
            for &z in &[-1.3, -0.2, 0.0, 0.4, 2.1] {
                let h = 1e-5;
                let e = eval(act, &coeffs, z);
                let ep = eval(act, &coeffs, z + h);
                let em = eval(act, &coeffs, z - h);
                assert!(((ep.v - em.v) / (2.0 * h) - e.d1).abs() < 1e-8);
                assert!(((ep.d1 - em.d1) / (2.0 * h) - e.d2).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn coefficient_sensitivities_match_finite_differences() {
        let coeffs = [0.1, 0.7, -0.3, 0.9, 1.2, 0.2, 0.8];
        let z = 0.63;
        let mut dv = [0.0; RATIONAL_COEFFS];
        let mut dd1 = [0.0; RATIONAL_COEFFS];
        coeff_sensitivities(&coeffs, z, &mut dv, &mut dd1);
        for k in 0..RATIONAL_COEFFS {
            let h = 1e-6;
            let mut cp = coeffs;
            let mut cm = coeffs;
            cp[k] += h;
            cm[k] -= h;
            let ep = eval(Activation::Rational32, &cp, z);
            let em = eval(Activation::Rational32, &cm, z);
            assert!(((ep.v - em.v) / (2.0 * h) - dv[k]).abs() < 1e-8, "coef {k}");
            assert!(((ep.d1 - em.d1) / (2.0 * h) - dd1[k]).abs() < 1e-8, "coef {k}");
        }
    }

    #[test]
    fn zero_coefficients_stay_finite() {
        let e = eval(Activation::Rational32, &[0.0; RATIONAL_COEFFS], 0.5);
        assert_eq!(e.v, 0.0);
        assert!(e.d1.is_finite() && e.d2.is_finite());
    }
}
