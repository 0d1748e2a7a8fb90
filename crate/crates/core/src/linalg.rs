//! Truncated-SVD least squares.

use faer::{Col, Mat, MatRef};

use crate::error::{validation, Error, Result};

#[derive(Clone, Debug)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    /// `||A x - b||_2`
    pub residual_norm: f64,
    /// Number of singular values kept.
    pub rank: usize,
    /// All singular values of `A`, descending.
    pub singular_values: Vec<f64>,
}

/// Minimum-norm solution of `min ||A x - b||` with singular values below
/// `rcond * sigma_max` discarded.
///
/// Tall systems are first reduced by a QR factorization of `[A | b]`, so the
/// SVD only runs on the small triangular factor.
pub fn lstsq(a: MatRef<'_, f64>, b: &[f64], rcond: f64) -> Result<LstsqSolution> {
    let (n, s) = (a.nrows(), a.ncols());
    if b.len() != n {
        return Err(validation(format!("right-hand side has length {} for {n} rows", b.len())));
    }
    if !(0.0..1.0).contains(&rcond) {
        return Err(validation(format!("rcond = {rcond} outside [0, 1)")));
    }
    if s == 0 || n == 0 {
        return Ok(LstsqSolution { x: vec![0.0; s], residual_norm: norm(b), rank: 0, singular_values: vec![] });
    }
    if !b.iter().all(|v| v.is_finite()) || !(0..s).all(|j| a.col(j).iter().all(|v| v.is_finite())) {
        return Err(Error::Numerical("non-finite entries in least-squares system".into()));
    }

    let (u, sig, v, rhs) = if n >= s {
        let mut aug = Mat::<f64>::zeros(n, s + 1);
        aug.as_mut().submatrix_mut(0, 0, n, s).copy_from(a);
        for (i, &bi) in b.iter().enumerate() {
            aug[(i, s)] = bi;
        }
        let qr = aug.qr();
        let r_aug = qr.thin_R();
        let r = r_aug.submatrix(0, 0, s, s);
        let c = Col::<f64>::from_fn(s, |i| r_aug[(i, s)]);
        let svd = r.svd().map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
        let sig: Vec<f64> = svd.S().column_vector().iter().copied().collect();
        (svd.U().to_owned(), sig, svd.V().to_owned(), c)
    } else {
        let svd = a.thin_svd().map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
        let sig: Vec<f64> = svd.S().column_vector().iter().copied().collect();
        (svd.U().to_owned(), sig, svd.V().to_owned(), Col::<f64>::from_fn(n, |i| b[i]))
    };

    let smax = sig.first().copied().unwrap_or(0.0);
    let cutoff = rcond * smax;
    let mut w = u.transpose() * &rhs;
    let mut rank = 0;
    for (k, &sk) in sig.iter().enumerate() {
        if smax > 0.0 && sk > cutoff {
            w[k] /= sk;
            rank += 1;
        } else {
            w[k] = 0.0;
        }
    }
    let xc = &v * &w;
    let x: Vec<f64> = xc.iter().copied().collect();

    let xcol = Col::<f64>::from_fn(s, |i| x[i]);
    let ax = a * &xcol;
    let residual_norm = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    Ok(LstsqSolution { x, residual_norm, rank, singular_values: sig })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Singular values of `a`, descending.
pub fn singular_values(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut sv = a.singular_values().map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, s: usize, seed: u64) -> (Mat<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Mat::from_fn(n, s, |_, _| rng.random_range(-1.0..1.0));
        let b = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (a, b)
    }

    /// Normal-equation solve by Gaussian elimination with partial pivoting,
    /// written out independently of the library path.
    fn normal_equations(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
        let s = a.ncols();
        let mut g = vec![vec![0.0; s + 1]; s];
        for i in 0..s {
            for j in 0..s {
                g[i][j] = (0..a.nrows()).map(|m| a[(m, i)] * a[(m, j)]).sum();
            }
            g[i][s] = (0..a.nrows()).map(|m| a[(m, i)] * b[m]).sum();
        }
        for c in 0..s {
            let piv = (c..s).max_by(|&x, &y| g[x][c].abs().total_cmp(&g[y][c].abs())).unwrap();
            g.swap(c, piv);
            for r in c + 1..s {
                let f = g[r][c] / g[c][c];
                for k in c..=s {
                    g[r][k] -= f * g[c][k];
                }
            }
        }
        let mut x = vec![0.0; s];
        for r in (0..s).rev() {
            x[r] = (g[r][s] - (r + 1..s).map(|k| g[r][k] * x[k]).sum::<f64>()) / g[r][r];
        }
        x
    }

    #[test]
    fn tall_full_rank_matches_normal_equations() {
        let (a, b) = random(40, 6, 1);
        let sol = lstsq(a.as_ref(), &b, 0.0).unwrap();
        let x = normal_equations(&a, &b);
        for (p, q) in sol.x.iter().zip(&x) {
            assert!((p - q).abs() < 1e-10);
        }
        assert_eq!(sol.rank, 6);
    }

    #[test]
    fn consistent_square_system_solved_exactly() {
        let (a, _) = random(5, 5, 2);
        let x0 = [1.0, -2.0, 0.5, 3.0, 0.0];
        let b: Vec<f64> = (0..5).map(|i| (0..5).map(|j| a[(i, j)] * x0[j]).sum()).collect();
        let sol = lstsq(a.as_ref(), &b, 1e-12).unwrap();
        for (p, q) in sol.x.iter().zip(x0) {
            assert!((p - q).abs() < 1e-10);
        }
        assert!(sol.residual_norm < 1e-12);
    }

    #[test]
    fn wide_system_gives_minimum_norm_solution() {
        // x = A^T (A A^T)^{-1} b is the minimum-norm solution.
        let (a, b) = random(4, 9, 3);
        let sol = lstsq(a.as_ref(), &b, 0.0).unwrap();
        assert!(sol.residual_norm < 1e-12);
        let at = a.transpose().to_owned();
        let y = normal_equations(&at, &sol.x);
        let back: Vec<f64> = (0..9).map(|j| (0..4).map(|i| a[(i, j)] * y[i]).sum()).collect();
        for (p, q) in sol.x.iter().zip(&back) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicate_columns_are_truncated() {
        let (mut a, b) = random(30, 4, 4);
        for i in 0..30 {
            a[(i, 3)] = a[(i, 1)];
        }
        let sol = lstsq(a.as_ref(), &b, 1e-10).unwrap();
        assert_eq!(sol.rank, 3);
        // Minimum norm splits the weight evenly between the copies.
        assert!((sol.x[1] - sol.x[3]).abs() < 1e-10);
    }

    #[test]
    fn zero_matrix_gives_zero_solution() {
        let a = Mat::<f64>::zeros(10, 3);
        let b: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let sol = lstsq(a.as_ref(), &b, 1e-4).unwrap();
        assert_eq!(sol.x, vec![0.0; 3]);
        assert_eq!(sol.rank, 0);
        assert!((sol.residual_norm - norm(&b)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (a, b) = random(5, 2, 5);
        assert!(lstsq(a.as_ref(), &b[..4], 0.0).is_err());
        assert!(lstsq(a.as_ref(), &b, 1.5).is_err());
        let mut bad = b.clone();
        bad[0] = f64::NAN;
        assert!(matches!(lstsq(a.as_ref(), &bad, 0.0), Err(Error::Numerical(_))));
    }

    proptest! {
        #[test]
        fn residual_orthogonal_to_range(seed in any::<u64>(), n in 1usize..30, s in 1usize..12) {
            let (a, b) = random(n, s, seed);
            let sol = lstsq(a.as_ref(), &b, 1e-12).unwrap();
            let r: Vec<f64> = (0..n).map(|i| (0..s).map(|j| a[(i, j)] * sol.x[j]).sum::<f64>() - b[i]).collect();
            prop_assert!((norm(&r) - sol.residual_norm).abs() < 1e-10);
            for j in 0..s {
                let dot: f64 = (0..n).map(|i| a[(i, j)] * r[i]).sum();
                prop_assert!(dot.abs() < 1e-8 * (1.0 + norm(&b)));
            }
        }
    }
}
