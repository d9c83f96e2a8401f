//! Explicit Runge–Kutta integrators for non-stiff initial value problems.
//!
//! Only the terminal state is returned; callers integrate between
//! observation times segment by segment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("exceeded {0} steps before reaching the end of the interval")]
    MaxStepsExceeded(usize),
    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeMethod {
    Rk4Fixed,
    DormandPrince,
}

/// Integrator choice and its knobs.
///
/// `steps_per_unit_time` applies to `Rk4Fixed`: an interval of length `Δ`
/// uses `max(1, ⌈steps_per_unit_time·Δ⌉)` equal steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: OdeMethod,
    pub steps_per_unit_time: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::dormand_prince(1e-6, 1e-8)
    }
}

impl SolverConfig {
    pub fn dormand_prince(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            method: OdeMethod::DormandPrince,
            steps_per_unit_time: 100.0,
            rel_tol,
            abs_tol,
            max_steps: 100_000,
        }
    }

    pub fn rk4(steps_per_unit_time: f64) -> Self {
        Self {
            method: OdeMethod::Rk4Fixed,
            steps_per_unit_time,
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            max_steps: 100_000_000,
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let bad = |m: &str| Err(OdeError::InvalidConfig(m.to_string()));
        match self.method {
            OdeMethod::Rk4Fixed if !(self.steps_per_unit_time > 0.0) => {
                bad("steps_per_unit_time must be positive")
            }
            OdeMethod::DormandPrince if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) => {
                bad("tolerances must be positive")
            }
            _ if self.max_steps == 0 => bad("max_steps must be at least 1"),
            _ => Ok(()),
        }
    }

    /// Number of RK4 steps over an interval of length `span`.
    pub fn fixed_steps(&self, span: f64) -> usize {
        ((self.steps_per_unit_time * span).ceil() as usize).max(1)
    }
}

/// Right-hand side `dy/dt = f(t, y)`, written into `dy`.
pub trait OdeRhs {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]);
}

impl<F: FnMut(f64, &[f64], &mut [f64])> OdeRhs for F {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        self(t, y, dy)
    }
}

/// Integrates from `t0` to `t1` and returns `y(t1)`.
pub fn solve_ivp<R: OdeRhs + ?Sized>(
    rhs: &mut R,
    y0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, OdeError> {
    cfg.validate()?;
    if !(t1 >= t0) {
        return Err(OdeError::InvalidConfig(format!(
            "t1 ({t1}) must not precede t0 ({t0})"
        )));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFiniteState(t0));
    }
    if t1 == t0 {
        return Ok(y0.to_vec());
    }
    match cfg.method {
        OdeMethod::Rk4Fixed => rk4(rhs, y0, t0, t1, cfg.fixed_steps(t1 - t0)),
        OdeMethod::DormandPrince => dopri5(rhs, y0, t0, t1, cfg),
    }
}

fn rk4<R: OdeRhs + ?Sized>(
    rhs: &mut R,
    y0: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<Vec<f64>, OdeError> {
    let m = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; m];
    let mut k2 = vec![0.0; m];
    let mut k3 = vec![0.0; m];
    let mut k4 = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        rhs.eval(t, &y, &mut k1);
        for i in 0..m {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs.eval(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..m {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs.eval(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..m {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs.eval(t + h, &tmp, &mut k4);
        for i in 0..m {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFiniteState(t + h));
        }
    }
    Ok(y)
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b − b̂ (fifth minus fourth order weights)
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

fn dopri5<R: OdeRhs + ?Sized>(
    rhs: &mut R,
    y0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, OdeError> {
    let m = y0.len();
    let mut y = y0.to_vec();
    let mut k = [(); 7].map(|_| vec![0.0; m]);
    let mut tmp = vec![0.0; m];
    let mut y_new = vec![0.0; m];
    let span = t1 - t0;

    let scale = |a: f64, b: f64| cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
    let mut t = t0;
    rhs.eval(t, &y, &mut k[0]);

    // Initial step (Hairer, Nørsett & Wanner, II.4).
    let mut h = {
        let d0 = y.iter().map(|v| (v / scale(*v, *v)).powi(2)).sum::<f64>().sqrt();
        let d1 = y
            .iter()
            .zip(&k[0])
            .map(|(v, f)| (f / scale(*v, *v)).powi(2))
            .sum::<f64>()
            .sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        for i in 0..m {
            tmp[i] = y[i] + h0 * k[0][i];
        }
        rhs.eval(t + h0, &tmp, &mut k[1]);
        let d2 = y
            .iter()
            .zip(k[1].iter().zip(&k[0]))
            .map(|(v, (a, b))| ((a - b) / scale(*v, *v)).powi(2))
            .sum::<f64>()
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    };

    let mut steps = 0usize;
    let mut last_rejected = false;
    while t < t1 {
        if steps >= cfg.max_steps {
            return Err(OdeError::MaxStepsExceeded(cfg.max_steps));
        }
        steps += 1;
        let last = t + h >= t1 || (t1 - (t + h)) < 1e-12 * span;
        if last {
            h = t1 - t;
        }

        for i in 0..m {
            tmp[i] = y[i] + h * A21 * k[0][i];
        }
        rhs.eval(t + C2 * h, &tmp, &mut k[1]);
        for i in 0..m {
            tmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
        }
        rhs.eval(t + C3 * h, &tmp, &mut k[2]);
        for i in 0..m {
            tmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        rhs.eval(t + C4 * h, &tmp, &mut k[3]);
        for i in 0..m {
            tmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        rhs.eval(t + C5 * h, &tmp, &mut k[4]);
        for i in 0..m {
            tmp[i] = y[i]
                + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
        }
        rhs.eval(t + h, &tmp, &mut k[5]);
        for i in 0..m {
            y_new[i] = y[i]
                + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        rhs.eval(t + h, &y_new, &mut k[6]);

        let mut err = 0.0f64;
        let mut finite = true;
        for i in 0..m {
            let e = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                    + E7 * k[6][i]);
            finite &= y_new[i].is_finite() && e.is_finite();
            err = err.max(e.abs() / scale(y[i], y_new[i]));
        }
        if !finite {
            if h < 1e-12 * span.max(1.0) {
                return Err(OdeError::NonFiniteState(t + h));
            }
            h *= MIN_FACTOR;
            last_rejected = true;
            continue;
        }

        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            let mut factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            if last_rejected {
                factor = factor.min(1.0);
            }
            last_rejected = false;
            h *= factor;
        } else {
            h *= (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
            last_rejected = true;
            if h < 1e-14 * span.max(1.0) {
                return Err(OdeError::MaxStepsExceeded(steps));
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    fn exp_rhs(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[0];
    }

    #[test]
    fn zero_rhs_keeps_state() {
        for cfg in [SolverConfig::default(), SolverConfig::rk4(10.0)] {
            let mut f = |_t: f64, _y: &[f64], dy: &mut [f64]| dy.fill(0.0);
            let y = solve_ivp(&mut f, &[3.0, -1.5], 0.0, 2.0, &cfg).unwrap();
            assert_eq!(y, vec![3.0, -1.5]);
        }
    }

    #[test]
    fn exponential_growth() {
        let cfg = SolverConfig::dormand_prince(1e-8, 1e-10);
        let y = solve_ivp(&mut exp_rhs, &[1.0], 0.0, 1.0, &cfg).unwrap();
        assert!((y[0] - E).abs() < 1e-6);
    }

    #[test]
    fn cosine_quadrature() {
        let mut f = |t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = t.cos();
        let y = solve_ivp(&mut f, &[0.0], 0.0, PI / 2.0, &SolverConfig::default()).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-6);
        let y = solve_ivp(&mut f, &[0.0], 0.0, PI / 2.0, &SolverConfig::rk4(100.0)).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let errs: Vec<f64> = [10.0, 20.0, 40.0]
            .iter()
            .map(|s| (solve_ivp(&mut exp_rhs, &[1.0], 0.0, 1.0, &SolverConfig::rk4(*s)).unwrap()[0] - E).abs())
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn dopri_error_tracks_tolerance() {
        let errs: Vec<f64> = [1e-4, 1e-6, 1e-8]
            .iter()
            .map(|tol| {
                let cfg = SolverConfig::dormand_prince(*tol, tol * 1e-2);
                (solve_ivp(&mut exp_rhs, &[1.0], 0.0, 1.0, &cfg).unwrap()[0] - E).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        for (e, tol) in errs.iter().zip([1e-4, 1e-6, 1e-8]) {
            assert!(*e < 10.0 * tol * E, "error {e} at tol {tol}");
        }
    }

    #[test]
    fn linear_system_matches_matrix_exponential() {
        use nalgebra::{DMatrix, DVector};
        let a = DMatrix::from_row_slice(3, 3, &[-0.5, 1.0, 0.0, -1.0, -0.5, 0.2, 0.0, 0.3, -1.0]);
        let y0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let exact = (&a * 2.0).exp() * &y0;
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            let v = &a * DVector::from_column_slice(y);
            dy.copy_from_slice(v.as_slice());
        };
        let got = solve_ivp(&mut f, y0.as_slice(), 0.0, 2.0, &SolverConfig::dormand_prince(1e-9, 1e-12)).unwrap();
        for i in 0..3 {
            assert!((got[i] - exact[i]).abs() < 1e-7);
        }
        let got = solve_ivp(&mut f, y0.as_slice(), 0.0, 2.0, &SolverConfig::rk4(200.0)).unwrap();
        for i in 0..3 {
            assert!((got[i] - exact[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn blow_up_is_reported() {
        // y' = y², y(0) = 1 explodes at t = 1
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0];
        let mut cfg = SolverConfig::default();
        cfg.max_steps = 2_000;
        let r = solve_ivp(&mut f, &[1.0], 0.0, 2.0, &cfg);
        assert!(matches!(
            r,
            Err(OdeError::MaxStepsExceeded(_)) | Err(OdeError::NonFiniteState(_))
        ));
        let r = solve_ivp(&mut f, &[1.0], 0.0, 2.0, &SolverConfig::rk4(10.0));
        assert!(matches!(r, Err(OdeError::NonFiniteState(_))));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SolverConfig::rk4(0.0);
        assert!(solve_ivp(&mut exp_rhs, &[1.0], 0.0, 1.0, &cfg).is_err());
        cfg = SolverConfig::dormand_prince(0.0, 1e-8);
        assert!(solve_ivp(&mut exp_rhs, &[1.0], 0.0, 1.0, &cfg).is_err());
        assert!(solve_ivp(&mut exp_rhs, &[1.0], 1.0, 0.0, &SolverConfig::default()).is_err());
    }
}
