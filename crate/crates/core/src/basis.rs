//! Orthonormal bases of L²[0, T] and truncated Brownian series.
//!
//! With `Zᵢ = ∫₀ᵀ φᵢ(u) dW_u` i.i.d. standard normal,
//! `W_t = Σᵢ Zᵢ ∫₀ᵗ φᵢ(u) du`. Truncating after `N` terms gives a smooth
//! path whose derivative `Σᵢ Zᵢ φᵢ(t)` drives the randomised ODE.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("basis index {index} out of range 1..={order}")]
    IndexOutOfRange { index: usize, order: usize },
    #[error("invalid basis parameters: {0}")]
    Invalid(String),
}

/// Basis family selector, as it appears in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    FourierSine,
    Haar,
    LinearOptimal,
}

#[derive(Debug, Clone, PartialEq)]
enum Family {
    FourierSine,
    Haar,
    /// `φ₁ ∝ exp(θu)`, the rest Gram–Schmidt completions over sines.
    /// `coeffs` is `N × N`: row `i` expresses `φ_{i+1}` in the generating set
    /// `{exp(θu), s₁, …, s_{N−1}}`.
    LinearOptimal { theta: f64, coeffs: DMatrix<f64> },
}

/// A truncated orthonormal basis on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    family: Family,
    horizon: f64,
    order: usize,
}

fn sine(k: usize, horizon: f64, t: f64) -> f64 {
    (2.0 / horizon).sqrt() * (((k as f64) - 0.5) * PI * t / horizon).sin()
}

fn sine_integral(k: usize, horizon: f64, t: f64) -> f64 {
    let w = ((k as f64) - 0.5) * PI / horizon;
    // 1 − cos(wt) = 2 sin²(wt/2), accurate near t = 0
    let half = (0.5 * w * t).sin();
    (2.0 / horizon).sqrt() * 2.0 * half * half / w
}

/// Haar index (1-based, constant first) to (level j, shift k).
fn haar_level_shift(i: usize) -> (u32, usize) {
    let m = i - 2;
    let j = usize::BITS - 1 - (m + 1).leading_zeros();
    let k = m + 1 - (1usize << j);
    (j, k)
}

fn haar(i: usize, horizon: f64, t: f64) -> f64 {
    if i == 1 {
        return 1.0 / horizon.sqrt();
    }
    let (j, k) = haar_level_shift(i);
    let scale = (1u64 << j) as f64;
    let s = t / horizon * scale - k as f64;
    let amp = scale.sqrt() / horizon.sqrt();
    if (0.0..0.5).contains(&s) {
        amp
    } else if (0.5..1.0).contains(&s) || (s == 1.0 && k + 1 == scale as usize) {
        -amp
    } else {
        0.0
    }
}

fn haar_integral(i: usize, horizon: f64, t: f64) -> f64 {
    if i == 1 {
        return t / horizon.sqrt();
    }
    let (j, k) = haar_level_shift(i);
    let scale = (1u64 << j) as f64;
    let s = (t / horizon * scale - k as f64).clamp(0.0, 1.0);
    let amp = scale.sqrt() / horizon.sqrt();
    // width of one unit of `s` in time
    let width = horizon / scale;
    let tri = if s <= 0.5 { s } else { 1.0 - s };
    amp * width * tri
}

/// `∫₀ᵗ exp(θu) du`.
fn exp_integral(theta: f64, t: f64) -> f64 {
    if theta == 0.0 {
        t
    } else {
        (theta * t).exp_m1() / theta
    }
}

/// `∫₀ᵀ exp(θu) sin(wu) du`.
fn exp_sine_inner(theta: f64, w: f64, horizon: f64) -> f64 {
    let e = (theta * horizon).exp();
    (e * (theta * (w * horizon).sin() - w * (w * horizon).cos()) + w) / (theta * theta + w * w)
}

impl BasisSpec {
    fn validate(horizon: f64, order: usize) -> Result<(), BasisError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(BasisError::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        if order == 0 {
            return Err(BasisError::Invalid("order must be at least 1".into()));
        }
        Ok(())
    }

    /// `φ_k(t) = √(2/T) sin((k − ½) π t / T)`.
    pub fn fourier_sine(horizon: f64, order: usize) -> Result<Self, BasisError> {
        Self::validate(horizon, order)?;
        Ok(Self {
            family: Family::FourierSine,
            horizon,
            order,
        })
    }

    /// Haar system: index 1 is the constant, then levels coarse to fine,
    /// shifts left to right.
    pub fn haar(horizon: f64, order: usize) -> Result<Self, BasisError> {
        Self::validate(horizon, order)?;
        Ok(Self {
            family: Family::Haar,
            horizon,
            order,
        })
    }

    /// Builds a basis of the given family. `theta` is only used by
    /// [`BasisFamily::LinearOptimal`].
    pub fn new(family: BasisFamily, horizon: f64, order: usize, theta: f64) -> Result<Self, BasisError> {
        match family {
            BasisFamily::FourierSine => Self::fourier_sine(horizon, order),
            BasisFamily::Haar => Self::haar(horizon, order),
            BasisFamily::LinearOptimal => make_linear_optimal_basis(theta, horizon, order),
        }
    }

    /// Same family and order on a different horizon.
    pub fn rescaled(&self, horizon: f64) -> Result<Self, BasisError> {
        match &self.family {
            Family::FourierSine => Self::fourier_sine(horizon, self.order),
            Family::Haar => Self::haar(horizon, self.order),
            Family::LinearOptimal { theta, .. } => make_linear_optimal_basis(*theta, horizon, self.order),
        }
    }

    pub fn family(&self) -> BasisFamily {
        match self.family {
            Family::FourierSine => BasisFamily::FourierSine,
            Family::Haar => BasisFamily::Haar,
            Family::LinearOptimal { .. } => BasisFamily::LinearOptimal,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn check_index(&self, i: usize) -> Result<(), BasisError> {
        if i == 0 || i > self.order {
            Err(BasisError::IndexOutOfRange {
                index: i,
                order: self.order,
            })
        } else {
            Ok(())
        }
    }

    /// `φᵢ(t)` for `1 ≤ i ≤ N`.
    pub fn eval(&self, i: usize, t: f64) -> Result<f64, BasisError> {
        self.check_index(i)?;
        Ok(self.eval_unchecked(i, t))
    }

    /// `∫₀ᵗ φᵢ(u) du` in closed form.
    pub fn integrated(&self, i: usize, t: f64) -> Result<f64, BasisError> {
        self.check_index(i)?;
        Ok(self.integrated_unchecked(i, t))
    }

    fn eval_unchecked(&self, i: usize, t: f64) -> f64 {
        let h = self.horizon;
        match &self.family {
            Family::FourierSine => sine(i, h, t),
            Family::Haar => haar(i, h, t),
            Family::LinearOptimal { theta, coeffs } => {
                let mut acc = coeffs[(i - 1, 0)] * (theta * t).exp();
                for k in 1..self.order {
                    acc += coeffs[(i - 1, k)] * sine(k, h, t);
                }
                acc
            }
        }
    }

    fn integrated_unchecked(&self, i: usize, t: f64) -> f64 {
        let h = self.horizon;
        match &self.family {
            Family::FourierSine => sine_integral(i, h, t),
            Family::Haar => haar_integral(i, h, t),
            Family::LinearOptimal { theta, coeffs } => {
                let mut acc = coeffs[(i - 1, 0)] * exp_integral(*theta, t);
                for k in 1..self.order {
                    acc += coeffs[(i - 1, k)] * sine_integral(k, h, t);
                }
                acc
            }
        }
    }

    /// Writes `φ₁(t), …, φ_N(t)` into `out`.
    pub fn eval_all(&self, t: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.order) {
            *o = self.eval_unchecked(i + 1, t);
        }
    }

    /// Writes `∫₀ᵗ φ₁, …, ∫₀ᵗ φ_N` into `out`.
    pub fn integrated_all(&self, t: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.order) {
            *o = self.integrated_unchecked(i + 1, t);
        }
    }

    /// Variance of one component of the truncated path at time `t` when the
    /// coefficients are standard normal: `Σᵢ (∫₀ᵗ φᵢ)²`.
    pub fn truncated_variance(&self, t: f64) -> f64 {
        (1..=self.order)
            .map(|i| self.integrated_unchecked(i, t).powi(2))
            .sum()
    }
}

/// Coefficient block `Z`, shape `N × d`: row `i` is `Zᵢ ∈ ℝᵈ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientBlock {
    pub z: DMatrix<f64>,
}

impl CoefficientBlock {
    pub fn new(z: DMatrix<f64>) -> Self {
        Self { z }
    }

    /// Reshapes a flat coefficient vector laid out coefficient-major:
    /// entries `[i·d .. (i+1)·d)` hold `Z_{i+1}`.
    pub fn from_flat(flat: &[f64], order: usize, noise_dim: usize) -> Self {
        assert_eq!(flat.len(), order * noise_dim);
        Self {
            z: DMatrix::from_row_slice(order, noise_dim, flat),
        }
    }

    pub fn zeros(order: usize, noise_dim: usize) -> Self {
        Self {
            z: DMatrix::zeros(order, noise_dim),
        }
    }
}

/// `Ŵ_t = Σ_{i≤N} Zᵢ ∫₀ᵗ φᵢ`.
pub fn reconstruct_path(spec: &BasisSpec, coeffs: &CoefficientBlock, t: f64) -> DVector<f64> {
    let n = spec.order().min(coeffs.z.nrows());
    let mut ints = vec![0.0; spec.order()];
    spec.integrated_all(t, &mut ints);
    let d = coeffs.z.ncols();
    DVector::from_fn(d, |k, _| (0..n).map(|i| coeffs.z[(i, k)] * ints[i]).sum())
}

/// Basis under which the truncated series solves the scalar linear SDE
/// `dX = −θ X dt + σ dW` exactly at time `T`.
///
/// `φ₁(u) = exp(θu) / ‖exp(θ·)‖`; `φ₂ … φ_N` complete it by Gram–Schmidt
/// (applied twice) over the sine family.
pub fn make_linear_optimal_basis(theta: f64, horizon: f64, order: usize) -> Result<BasisSpec, BasisError> {
    BasisSpec::validate(horizon, order)?;
    if !theta.is_finite() {
        return Err(BasisError::Invalid("theta must be finite".into()));
    }
    // Gram matrix of the generating set {e, s₁, …, s_{N−1}}.
    let m = order;
    let mut gram = DMatrix::<f64>::identity(m, m);
    gram[(0, 0)] = if theta == 0.0 {
        horizon
    } else {
        (2.0 * theta * horizon).exp_m1() / (2.0 * theta)
    };
    for k in 1..m {
        let w = ((k as f64) - 0.5) * PI / horizon;
        let ip = (2.0 / horizon).sqrt() * exp_sine_inner(theta, w, horizon);
        gram[(0, k)] = ip;
        gram[(k, 0)] = ip;
    }
    let inner = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &gram * b)[(0, 0)];

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m);
    for g in 0..m {
        let mut v = DVector::zeros(m);
        v[g] = 1.0;
        for _ in 0..2 {
            for q in &basis {
                let p = inner(q, &v);
                v -= q * p;
            }
        }
        let norm = inner(&v, &v).max(0.0).sqrt();
        if norm < 1e-10 {
            return Err(BasisError::Invalid(
                "linear-optimal completion lost rank".into(),
            ));
        }
        basis.push(v / norm);
    }
    let mut coeffs = DMatrix::zeros(m, m);
    for (i, v) in basis.iter().enumerate() {
        coeffs.row_mut(i).copy_from(&v.transpose());
    }
    Ok(BasisSpec {
        family: Family::LinearOptimal { theta, coeffs },
        horizon,
        order,
    })
}
