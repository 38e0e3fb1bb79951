use crate::error::{Error, Result};

use super::{Matrix, Rng};

const SYMMETRY_TOL: f64 = 1e-10;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// The input is symmetrized as `(A + Aᵀ)/2` before factorization; asymmetry beyond
/// `1e-10` is rejected.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "cholesky of non-square {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }

    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: pivot });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = 0.5 * (a[(i, j)] + a[(j, i)]);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// `log det A` in nats, via `2 Σ log L_ii`.
pub fn cholesky_logdet(a: &Matrix) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(2.0 * (0..l.rows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// `n` rows drawn from `N(mu, L Lᵀ)`; `mu` is a length-`k` slice and `cov_chol` is `k × k`
/// lower-triangular with positive diagonal.
pub fn gaussian_sample(rng: &mut Rng, mu: &[f64], cov_chol: &Matrix, n: usize) -> Result<Matrix> {
    let k = mu.len();
    if cov_chol.shape() != (k, k) {
        return Err(Error::DimensionMismatch(format!(
            "mean has {k} entries, factor is {}x{}",
            cov_chol.rows(),
            cov_chol.cols()
        )));
    }
    for i in 0..k {
        if !(cov_chol[(i, i)] > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "factor diagonal entry {i} is not positive"
            )));
        }
        if (i + 1..k).any(|j| cov_chol[(i, j)] != 0.0) {
            return Err(Error::InvalidArgument("factor is not lower triangular".into()));
        }
    }
    let mut out = Matrix::zeros(n, k);
    let mut z = vec![0.0; k];
    for r in 0..n {
        z.iter_mut().for_each(|v| *v = rng.normal());
        let row = out.row_mut(r);
        for i in 0..k {
            let mut s = mu[i];
            for j in 0..=i {
                s += cov_chol[(i, j)] * z[j];
            }
            row[i] = s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};

    /// Cyclic Jacobi eigenvalues; independent of the Cholesky path.
    fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let mut m = a.clone();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)] * m[(i, j)])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if m[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                }
            }
        }
        (0..n).map(|i| m[(i, i)]).collect()
    }

    fn random_spd(rng: &mut Rng, k: usize) -> Matrix {
        let b = Matrix::from_vec(k, k, (0..k * k).map(|_| rng.normal()).collect()).unwrap();
        let mut a = b.t_matmul(&b);
        for i in 0..k {
            a[(i, i)] += 1.0;
        }
        a
    }

    #[test]
    fn identity_logdet_is_zero() {
        assert_eq!(cholesky_logdet(&Matrix::identity(3)).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_logdet() {
        let v = cholesky_logdet(&Matrix::diag(&[2.0, 3.0])).unwrap();
        assert!((v - 6f64.ln()).abs() < 1e-14);
        assert!((v - 1.79176).abs() < 1e-5);
    }

    #[test]
    fn random_spd_matches_eigenvalues() {
        let mut rng = Rng::new(11);
        for _ in 0..10 {
            let a = random_spd(&mut rng, 5);
            let eig: f64 = jacobi_eigenvalues(&a).iter().map(|l| l.ln()).sum();
            let chol = cholesky_logdet(&a).unwrap();
            assert!((eig - chol).abs() < 1e-8, "{eig} vs {chol}");
        }
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let a = Matrix::diag(&[1.0, -1.0]);
        assert!(matches!(cholesky_logdet(&a), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
        let z = Matrix::zeros(2, 2);
        assert!(matches!(cholesky_logdet(&z), Err(Error::NotPositiveDefinite { pivot: 0, .. })));
        let mut s = Matrix::identity(2);
        s[(0, 1)] = 1e-6;
        assert!(matches!(cholesky_logdet(&s), Err(Error::NotSymmetric(_))));
        s[(0, 1)] = 1e-12;
        assert!(cholesky_logdet(&s).is_ok());
    }

    proptest! {
        #[test]
        fn logdet_scales_with_dimension(seed in 0u64..10_000, k in 1usize..7, c in 0.01f64..50.0) {
            let mut rng = Rng::new(seed);
            let a = random_spd(&mut rng, k);
            let base = cholesky_logdet(&a).unwrap();
            let scaled = cholesky_logdet(&a.scale(c)).unwrap();
            prop_assert!((scaled - (k as f64 * c.ln() + base)).abs() < 1e-8);
        }
    }

    #[test]
    fn standard_normal_sample_mean() {
        let mut rng = Rng::new(5);
        let x = gaussian_sample(&mut rng, &[0.0, 0.0, 0.0], &Matrix::identity(3), 10_000).unwrap();
        for m in x.column_means() {
            assert!(m.abs() < 0.05, "{m}");
        }
    }

    #[test]
    fn empty_and_near_degenerate_samples() {
        let mut rng = Rng::new(5);
        let x = gaussian_sample(&mut rng, &[1.0], &Matrix::identity(1), 0).unwrap();
        assert_eq!(x.shape(), (0, 1));

        let x = gaussian_sample(&mut rng, &[5.0], &Matrix::scalar(1e-4), 1000).unwrap();
        assert!(x.as_slice().iter().all(|v| (v - 5.0).abs() < 0.01));
    }

    #[test]
    fn correlated_sample_covariance() {
        let mut rng = Rng::new(9);
        let l = cholesky(&Matrix::from_rows(&[[1.0, 0.8], [0.8, 1.0]]).unwrap()).unwrap();
        let x = gaussian_sample(&mut rng, &[0.0, 0.0], &l, 20_000).unwrap();
        let xy: f64 = x.row_iter().map(|r| r[0] * r[1]).sum::<f64>() / 20_000.0;
        assert!((xy - 0.8).abs() < 0.03, "{xy}");
        assert!(gaussian_sample(&mut rng, &[0.0], &l, 3).is_err());
    }
}
