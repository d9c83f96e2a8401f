//! Small dense matrix helpers: covariance square roots.
//!
//! Two square roots are provided. The Cholesky factor `L` satisfies
//! `L Lᵀ = P`; the symmetric (principal) root `S` satisfies `S S = P`.
//! Both generate sigma-point sets with identical first and second moments,
//! but the point clouds differ, which matters for strongly nonlinear maps.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used to tell round-off from genuine indefiniteness.
pub const CLAMP_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot or eigenvalue {value:e} at index {index})")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("symmetric eigendecomposition did not converge")]
    EigenFailure,
    #[error("matrix is singular")]
    Singular,
}

/// Which square root to use when spreading sigma points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SqrtKind {
    #[default]
    Cholesky,
    Symmetric,
}

/// Returns `(P + Pᵀ) / 2`.
pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

fn check_input(p: &DMatrix<f64>) -> Result<(), LinalgError> {
    if !p.is_square() {
        return Err(LinalgError::NotSquare {
            rows: p.nrows(),
            cols: p.ncols(),
        });
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(())
}

/// Lower-triangular `L` with `L Lᵀ = P`.
///
/// The input is symmetrized first. A pivot that is zero up to round-off
/// (relative to the largest diagonal entry) is accepted when the rest of its
/// column also vanishes, so exactly degenerate covariances such as a point
/// mass still factor. Anything else non-positive is reported.
pub fn cholesky_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    check_input(p)?;
    let a = symmetrize(p);
    let n = a.nrows();
    let scale = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = CLAMP_REL_TOL * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > tol {
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        } else if d >= -tol {
            // Zero pivot: the remaining column must vanish too.
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > (tol * scale).sqrt() {
                    return Err(LinalgError::NotPositiveDefinite { index: j, value: d });
                }
            }
        } else {
            return Err(LinalgError::NotPositiveDefinite { index: j, value: d });
        }
    }
    Ok(l)
}

/// Symmetric `S` with `S S = P`, via eigendecomposition.
///
/// Eigenvalues in `[-1e-10 λ_max, 0]` are clamped to zero; more negative ones
/// are reported as [`LinalgError::NotPositiveDefinite`].
pub fn symmetric_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    check_input(p)?;
    let a = symmetrize(p);
    let n = a.nrows();
    if n == 0 {
        return Ok(a);
    }
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, 10_000).ok_or(LinalgError::EigenFailure)?;
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(*v));
    let mut roots = eig.eigenvalues.clone();
    for (i, lam) in roots.iter_mut().enumerate() {
        if *lam < 0.0 {
            if *lam >= -CLAMP_REL_TOL * lmax {
                *lam = 0.0;
            } else {
                return Err(LinalgError::NotPositiveDefinite { index: i, value: *lam });
            }
        }
        *lam = lam.sqrt();
    }
    let v = &eig.eigenvectors;
    let mut vs = v.clone();
    for (j, r) in roots.iter().enumerate() {
        vs.column_mut(j).scale_mut(*r);
    }
    Ok(symmetrize(&(vs * v.transpose())))
}

/// Dispatches on [`SqrtKind`].
pub fn matrix_sqrt(p: &DMatrix<f64>, kind: SqrtKind) -> Result<DMatrix<f64>, LinalgError> {
    match kind {
        SqrtKind::Cholesky => cholesky_sqrt(p),
        SqrtKind::Symmetric => symmetric_sqrt(p),
    }
}

/// Checks that `P` is a valid covariance: finite, symmetric to relative
/// tolerance 1e-12 (after the caller symmetrizes this is trivially true) and
/// without eigenvalues below the clamping threshold.
pub fn validate_covariance(p: &DMatrix<f64>) -> Result<(), LinalgError> {
    check_input(p)?;
    let norm = p.norm().max(f64::MIN_POSITIVE);
    if (p - p.transpose()).norm() > 1e-12 * norm {
        return Err(LinalgError::NotPositiveDefinite {
            index: 0,
            value: f64::NAN,
        });
    }
    symmetric_sqrt(p).map(|_| ())
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(p: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    check_input(p)?;
    let chol = nalgebra::Cholesky::new(symmetrize(p)).ok_or(LinalgError::Singular)?;
    Ok(chol.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let i = DMatrix::<f64>::identity(2, 2);
        assert_eq!(cholesky_sqrt(&i).unwrap(), i);
        let d = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let l = cholesky_sqrt(&d).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
    }

    #[test]
    fn cholesky_two_by_two() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let l = cholesky_sqrt(&p).unwrap();
        assert!((l[(0, 0)] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
        assert!(rel_err(&(&l * l.transpose()), &p) < 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_sqrt(&p),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn cholesky_accepts_point_mass_block() {
        let mut p = DMatrix::<f64>::identity(3, 3);
        p[(0, 0)] = 0.0;
        let l = cholesky_sqrt(&p).unwrap();
        assert!(rel_err(&(&l * l.transpose()), &p) < 1e-12);
    }

    #[test]
    fn symmetric_identity_and_diagonal() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((symmetric_sqrt(&i).unwrap() - &i).norm() < 1e-14);
        let d = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let s = symmetric_sqrt(&d).unwrap();
        assert!((s - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0])).norm() < 1e-14);
    }

    #[test]
    fn symmetric_two_by_two_multiplies_back() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = symmetric_sqrt(&p).unwrap();
        assert!((&s * &s - &p).norm() <= 1e-8);
    }

    #[test]
    fn symmetric_clamps_round_off_but_not_real_negatives() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-13]);
        let s = symmetric_sqrt(&p).unwrap();
        assert_eq!(s[(1, 1)], 0.0);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(matches!(
            symmetric_sqrt(&q),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn non_finite_is_rejected() {
        let p = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert_eq!(cholesky_sqrt(&p), Err(LinalgError::NonFinite));
        assert_eq!(symmetric_sqrt(&p), Err(LinalgError::NonFinite));
    }

    fn spd_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..=10).prop_flat_map(|n| {
            proptest::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
                let a = DMatrix::from_vec(n, n, v);
                &a * a.transpose() + DMatrix::identity(n, n) * 0.1
            })
        })
    }

    proptest! {
        #[test]
        fn both_roots_reproduce_random_spd(p in spd_strategy()) {
            let l = cholesky_sqrt(&p).unwrap();
            prop_assert!(rel_err(&(&l * l.transpose()), &p) <= 1e-8);
            let s = symmetric_sqrt(&p).unwrap();
            prop_assert!(rel_err(&(&s * s.transpose()), &p) <= 1e-8);
            prop_assert!((&s - s.transpose()).norm() <= 1e-10);
        }
    }
}
