//! Sigma-point rules and weighted moment estimates.
//!
//! The scaled unscented transform uses `λ = α²(n + κ) − n` and the `2n + 1`
//! points `m`, `m ± (√((n+λ) P))_{*i}`. Cubature is the special case
//! `α = 1, κ = 0, β = 0`. The third-order Gauss–Hermite rule uses the tensor
//! grid `{−√3, 0, √3}ⁿ` with weights `{1/6, 2/3, 1/6}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{matrix_sqrt, LinalgError, SqrtKind};

/// Largest dimension accepted by the Gauss–Hermite tensor rule.
pub const GAUSS_HERMITE_MAX_DIM: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SigmaError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("degenerate scaling: n + λ = {0} must be positive")]
    DegenerateScaling(f64),
    #[error("Gauss–Hermite rule requested in dimension {0} (limit {GAUSS_HERMITE_MAX_DIM})")]
    DimensionTooLarge(usize),
    #[error("expected {expected} images, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaScheme {
    ScaledUt,
    Cubature,
    GaussHermite3,
}

/// How `κ` is chosen for the scaled unscented transform.
///
/// `SpreadTarget(s)` picks `κ = s − n` for whatever dimension the rule is
/// applied in, so that `n + λ = α² s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kappa {
    Fixed(f64),
    SpreadTarget(f64),
}

impl Kappa {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            Kappa::Fixed(k) => k,
            Kappa::SpreadTarget(s) => s - n as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaRule {
    pub scheme: SigmaScheme,
    pub alpha: f64,
    pub kappa: Kappa,
    pub beta: f64,
    pub sqrt_kind: SqrtKind,
}

impl SigmaRule {
    pub fn scaled_ut(alpha: f64, kappa: f64, beta: f64, sqrt_kind: SqrtKind) -> Self {
        Self {
            scheme: SigmaScheme::ScaledUt,
            alpha,
            kappa: Kappa::Fixed(kappa),
            beta,
            sqrt_kind,
        }
    }

    pub fn cubature(sqrt_kind: SqrtKind) -> Self {
        Self {
            scheme: SigmaScheme::Cubature,
            alpha: 1.0,
            kappa: Kappa::Fixed(0.0),
            beta: 0.0,
            sqrt_kind,
        }
    }

    pub fn gauss_hermite3(sqrt_kind: SqrtKind) -> Self {
        Self {
            scheme: SigmaScheme::GaussHermite3,
            alpha: 1.0,
            kappa: Kappa::Fixed(0.0),
            beta: 0.0,
            sqrt_kind,
        }
    }

    /// `α = 1, β = 0`, `κ = spread − n`: points at `±√spread` standard deviations.
    pub fn with_spread(spread: f64, sqrt_kind: SqrtKind) -> Self {
        Self {
            scheme: SigmaScheme::ScaledUt,
            alpha: 1.0,
            kappa: Kappa::SpreadTarget(spread),
            beta: 0.0,
            sqrt_kind,
        }
    }

    /// `(α, κ, β)` actually used in dimension `n`.
    pub fn effective(&self, n: usize) -> (f64, f64, f64) {
        match self.scheme {
            SigmaScheme::Cubature => (1.0, 0.0, 0.0),
            _ => (self.alpha, self.kappa.resolve(n), self.beta),
        }
    }

    /// `λ = α²(n + κ) − n`.
    pub fn lambda(&self, n: usize) -> f64 {
        let (alpha, kappa, _) = self.effective(n);
        alpha * alpha * (n as f64 + kappa) - n as f64
    }

    pub fn num_points(&self, n: usize) -> usize {
        match self.scheme {
            SigmaScheme::GaussHermite3 => 3usize.pow(n as u32),
            _ => 2 * n + 1,
        }
    }
}

/// Points with mean and covariance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSet {
    pub mean: DVector<f64>,
    pub points: Vec<DVector<f64>>,
    pub w_mean: Vec<f64>,
    pub w_cov: Vec<f64>,
}

impl SigmaSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Generates the sigma points of `N(m, P)` under `rule`.
pub fn generate(m: &DVector<f64>, p: &DMatrix<f64>, rule: &SigmaRule) -> Result<SigmaSet, SigmaError> {
    let n = m.len();
    match rule.scheme {
        SigmaScheme::ScaledUt | SigmaScheme::Cubature => {
            let (alpha, _, beta) = rule.effective(n);
            let lambda = rule.lambda(n);
            let spread = n as f64 + lambda;
            if !(spread > 0.0) {
                return Err(SigmaError::DegenerateScaling(spread));
            }
            let root = matrix_sqrt(p, rule.sqrt_kind)? * spread.sqrt();
            let mut points = Vec::with_capacity(2 * n + 1);
            points.push(m.clone());
            for i in 0..n {
                points.push(m + root.column(i));
            }
            for i in 0..n {
                points.push(m - root.column(i));
            }
            let wi = 1.0 / (2.0 * spread);
            let mut w_mean = vec![wi; 2 * n + 1];
            let mut w_cov = w_mean.clone();
            w_mean[0] = lambda / spread;
            w_cov[0] = lambda / spread + (1.0 - alpha * alpha + beta);
            Ok(SigmaSet {
                mean: m.clone(),
                points,
                w_mean,
                w_cov,
            })
        }
        SigmaScheme::GaussHermite3 => {
            if n > GAUSS_HERMITE_MAX_DIM {
                return Err(SigmaError::DimensionTooLarge(n));
            }
            let root = matrix_sqrt(p, rule.sqrt_kind)?;
            let nodes = [-(3f64.sqrt()), 0.0, 3f64.sqrt()];
            let weights = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
            let count = 3usize.pow(n as u32);
            let mut points = Vec::with_capacity(count);
            let mut w = Vec::with_capacity(count);
            let mut xi = DVector::zeros(n);
            for idx in 0..count {
                let mut rem = idx;
                let mut weight = 1.0;
                for j in 0..n {
                    let digit = rem % 3;
                    rem /= 3;
                    xi[j] = nodes[digit];
                    weight *= weights[digit];
                }
                points.push(m + &root * &xi);
                w.push(weight);
            }
            Ok(SigmaSet {
                mean: m.clone(),
                points,
                w_mean: w.clone(),
                w_cov: w,
            })
        }
    }
}

/// Moments of the images `Yᵢ = f(σⁱ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `Σ w_cov (σⁱ − m)(Yᵢ − μ)ᵀ`, shape `n × p`.
    pub cross: DMatrix<f64>,
}

/// Weighted mean, covariance and cross-covariance of sigma-point images.
pub fn transform_moments(set: &SigmaSet, images: &[DVector<f64>]) -> Result<TransformedMoments, SigmaError> {
    if images.len() != set.len() {
        return Err(SigmaError::LengthMismatch {
            expected: set.len(),
            got: images.len(),
        });
    }
    let p = images.first().map_or(0, |y| y.len());
    let n = set.dim();
    let mut mean = DVector::zeros(p);
    for (w, y) in set.w_mean.iter().zip(images) {
        mean.axpy(*w, y, 1.0);
    }
    let mut cov = DMatrix::zeros(p, p);
    let mut cross = DMatrix::zeros(n, p);
    for ((w, y), s) in set.w_cov.iter().zip(images).zip(&set.points) {
        let dy = y - &mean;
        let dx = s - &set.mean;
        cov.ger(*w, &dy, &dy, 1.0);
        cross.ger(*w, &dx, &dy, 1.0);
    }
    Ok(TransformedMoments { mean, cov, cross })
}

/// Same as [`transform_moments`] but with the images' own weighted mean as
/// the reference for the cross term in place of the rule's input mean.
pub fn sample_moments(set: &SigmaSet, states: &[DVector<f64>], images: &[DVector<f64>]) -> Result<(DVector<f64>, TransformedMoments), SigmaError> {
    if images.len() != set.len() || states.len() != set.len() {
        return Err(SigmaError::LengthMismatch {
            expected: set.len(),
            got: images.len().min(states.len()),
        });
    }
    let n = states.first().map_or(0, |x| x.len());
    let p = images.first().map_or(0, |y| y.len());
    let mut mx = DVector::zeros(n);
    let mut my = DVector::zeros(p);
    for ((w, x), y) in set.w_mean.iter().zip(states).zip(images) {
        mx.axpy(*w, x, 1.0);
        my.axpy(*w, y, 1.0);
    }
    let mut cov = DMatrix::zeros(p, p);
    let mut cross = DMatrix::zeros(n, p);
    for ((w, x), y) in set.w_cov.iter().zip(states).zip(images) {
        let dy = y - &my;
        let dx = x - &mx;
        cov.ger(*w, &dy, &dy, 1.0);
        cross.ger(*w, &dx, &dy, 1.0);
    }
    Ok((
        mx,
        TransformedMoments {
            mean: my,
            cov,
            cross,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn one_dimensional_scaled_ut() {
        let rule = SigmaRule::scaled_ut(1.0, 2.0, 0.0, SqrtKind::Cholesky);
        let s = generate(&v(&[0.0]), &DMatrix::identity(1, 1), &rule).unwrap();
        assert_eq!(rule.lambda(1), 2.0);
        let r3 = 3f64.sqrt();
        let pts: Vec<f64> = s.points.iter().map(|p| p[0]).collect();
        assert!((pts[0]).abs() < 1e-15 && (pts[1] - r3).abs() < 1e-15 && (pts[2] + r3).abs() < 1e-15);
        let expect = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        for (w, e) in s.w_mean.iter().zip(expect) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn cubature_two_dimensional() {
        let rule = SigmaRule::cubature(SqrtKind::Cholesky);
        let s = generate(&v(&[0.0, 0.0]), &DMatrix::identity(2, 2), &rule).unwrap();
        assert_eq!(rule.lambda(2), 0.0);
        assert_eq!(s.w_mean[0], 0.0);
        let r2 = 2f64.sqrt();
        assert!((&s.points[1] - v(&[r2, 0.0])).norm() < 1e-15);
        assert!((&s.points[2] - v(&[0.0, r2])).norm() < 1e-15);
        assert!((&s.points[3] + v(&[r2, 0.0])).norm() < 1e-15);
        assert!(s.w_mean[1..].iter().all(|w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn cubature_equals_scaled_ut_1_0_0() {
        let m = v(&[1.0, -2.0, 0.5]);
        let p = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let a = generate(&m, &p, &SigmaRule::cubature(SqrtKind::Symmetric)).unwrap();
        let b = generate(&m, &p, &SigmaRule::scaled_ut(1.0, 0.0, 0.0, SqrtKind::Symmetric)).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.points.iter().zip(&b.points) {
            assert!((x - y).amax() <= 1e-12);
        }
        assert_eq!(a.w_mean, b.w_mean);
        assert_eq!(a.w_cov, b.w_cov);
    }

    #[test]
    fn gauss_hermite_one_dimensional() {
        let s = generate(&v(&[0.0]), &DMatrix::identity(1, 1), &SigmaRule::gauss_hermite3(SqrtKind::Cholesky)).unwrap();
        let r3 = 3f64.sqrt();
        let pts: Vec<f64> = s.points.iter().map(|p| p[0]).collect();
        assert_eq!(pts, vec![-r3, 0.0, r3]);
        assert_eq!(s.w_mean, vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]);
        assert_eq!(s.w_cov, s.w_mean);
    }

    #[test]
    fn gauss_hermite_integrates_quintics() {
        // E[x^k] for N(0,1): 1, 0, 1, 0, 3, 0
        let moments = [1.0, 0.0, 1.0, 0.0, 3.0, 0.0];
        let s = generate(&v(&[0.0]), &DMatrix::identity(1, 1), &SigmaRule::gauss_hermite3(SqrtKind::Cholesky)).unwrap();
        for (k, expect) in moments.iter().enumerate() {
            let got: f64 = s.w_mean.iter().zip(&s.points).map(|(w, p)| w * p[0].powi(k as i32)).sum();
            assert!((got - expect).abs() < 1e-10, "degree {k}");
        }
    }

    #[test]
    fn gauss_hermite_guard() {
        let n = GAUSS_HERMITE_MAX_DIM + 1;
        let r = generate(&DVector::zeros(n), &DMatrix::identity(n, n), &SigmaRule::gauss_hermite3(SqrtKind::Cholesky));
        assert_eq!(r, Err(SigmaError::DimensionTooLarge(n)));
    }

    #[test]
    fn degenerate_scaling_rejected() {
        let rule = SigmaRule::scaled_ut(1.0, -3.0, 0.0, SqrtKind::Cholesky);
        let r = generate(&DVector::zeros(2), &DMatrix::identity(2, 2), &rule);
        assert!(matches!(r, Err(SigmaError::DegenerateScaling(_))));
    }

    #[test]
    fn spread_target_resolves_against_dimension() {
        let rule = SigmaRule::with_spread(7.0, SqrtKind::Symmetric);
        assert_eq!(rule.effective(39), (1.0, -32.0, 0.0));
        assert_eq!(rule.lambda(39) + 39.0, 7.0);
        let s = generate(&DVector::zeros(39), &DMatrix::identity(39, 39), &rule).unwrap();
        assert!((s.points[1][0] - 7f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        let s = generate(&v(&[0.0]), &DMatrix::identity(1, 1), &SigmaRule::cubature(SqrtKind::Cholesky)).unwrap();
        assert!(matches!(
            transform_moments(&s, &[v(&[1.0])]),
            Err(SigmaError::LengthMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn affine_maps_are_exact() {
        let m = v(&[0.5, -1.0]);
        let p = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.3, 0.0, 1.0]);
        let b = v(&[1.0, 0.0, -2.0]);
        for rule in [
            SigmaRule::cubature(SqrtKind::Cholesky),
            SigmaRule::scaled_ut(1.0, 1.0, 0.0, SqrtKind::Symmetric),
            SigmaRule::gauss_hermite3(SqrtKind::Symmetric),
        ] {
            let s = generate(&m, &p, &rule).unwrap();
            let images: Vec<_> = s.points.iter().map(|x| &a * x + &b).collect();
            let t = transform_moments(&s, &images).unwrap();
            assert!((t.mean - (&a * &m + &b)).amax() < 1e-8);
            assert!((t.cov - &a * &p * a.transpose()).amax() < 1e-8);
            assert!((t.cross - &p * a.transpose()).amax() < 1e-8);
        }
        // identity images
        let s = generate(&m, &p, &SigmaRule::cubature(SqrtKind::Cholesky)).unwrap();
        let t = transform_moments(&s, &s.points).unwrap();
        assert!((t.cov - &p).amax() < 1e-12 && (t.cross - &p).amax() < 1e-12);
    }

    #[test]
    fn cubic_mean_is_exact() {
        let rule = SigmaRule::scaled_ut(1.0, 2.0, 0.0, SqrtKind::Cholesky);
        let s = generate(&v(&[0.0]), &DMatrix::identity(1, 1), &rule).unwrap();
        let images: Vec<_> = s.points.iter().map(|x| v(&[x[0].powi(3)])).collect();
        let t = transform_moments(&s, &images).unwrap();
        assert!(t.mean[0].abs() < 1e-14);
    }

    #[test]
    fn beta_only_moves_center_covariance_weight() {
        let m = v(&[0.0, 1.0]);
        let p = DMatrix::identity(2, 2);
        let a = generate(&m, &p, &SigmaRule::scaled_ut(0.5, 1.0, 0.0, SqrtKind::Cholesky)).unwrap();
        let b = generate(&m, &p, &SigmaRule::scaled_ut(0.5, 1.0, 2.0, SqrtKind::Cholesky)).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.w_mean, b.w_mean);
        assert_eq!(a.w_cov[1..], b.w_cov[1..]);
        assert!((b.w_cov[0] - a.w_cov[0] - 2.0).abs() < 1e-15);
    }

    fn gaussian_strategy() -> impl Strategy<Value = (DVector<f64>, DMatrix<f64>)> {
        (1usize..=5).prop_flat_map(|n| {
            (
                proptest::collection::vec(-3.0f64..3.0, n),
                proptest::collection::vec(-1.0f64..1.0, n * n),
            )
                .prop_map(move |(m, a)| {
                    let a = DMatrix::from_vec(n, n, a);
                    (DVector::from_vec(m), &a * a.transpose() + DMatrix::identity(n, n) * 0.05)
                })
        })
    }

    proptest! {
        #[test]
        fn moments_reconstructed_for_both_roots((m, p) in gaussian_strategy(), kappa in 0.0f64..3.0) {
            for kind in [SqrtKind::Cholesky, SqrtKind::Symmetric] {
                let s = generate(&m, &p, &SigmaRule::scaled_ut(1.0, kappa, 0.0, kind)).unwrap();
                prop_assert!((s.w_mean.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let t = transform_moments(&s, &s.points).unwrap();
                prop_assert!((&t.mean - &m).amax() < 1e-10);
                prop_assert!((&t.cov - &p).amax() < 1e-8);
            }
        }
    }
}
