//! Itô SDE and measurement models.
//!
//! A model is `dX = a(X) dt + b(X) dW` with `X ∈ ℝⁿ` and a standard
//! `d`-dimensional Brownian motion `W`. Observations are
//! `Y = h(X) + V`, `V ~ N(0, R)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Drift/diffusion pair of a time-homogeneous Itô SDE.
pub trait SdeModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;

    /// Writes `a(x)` into `out` (length `n`).
    fn drift(&self, x: &[f64], out: &mut [f64]);

    /// Writes `b(x)` into `out` (shape `n × d`).
    fn diffusion(&self, x: &[f64], out: &mut DMatrix<f64>);

    /// `∂a/∂x` when known in closed form.
    fn drift_jacobian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// `∂b/∂x_j` for every `j`, each an `n × d` matrix, when known in closed form.
    fn diffusion_partials(&self, _x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        None
    }
}

/// Observation function and additive Gaussian noise covariance.
pub trait MeasurementModel: Send + Sync {
    fn obs_dim(&self) -> usize;
    fn observe(&self, x: &[f64]) -> DVector<f64>;
    fn noise_cov(&self) -> &DMatrix<f64>;

    /// Innovation `y − μ`. Models with angular components wrap them.
    fn residual(&self, y: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        y - mu
    }
}

/// Mean and covariance of a Gaussian approximation at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub time: f64,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, time: f64) -> Self {
        Self { mean, cov, time }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Central-difference step for coordinate `x_j`.
#[inline]
pub fn fd_step(xj: f64) -> f64 {
    1e-5 * (1.0 + xj.abs())
}

/// `∂b/∂x_j` by central differences.
pub fn diffusion_partials_fd(model: &dyn SdeModel, x: &[f64]) -> Vec<DMatrix<f64>> {
    let n = model.state_dim();
    let d = model.noise_dim();
    let mut xp = x.to_vec();
    let mut bp = DMatrix::zeros(n, d);
    let mut bm = DMatrix::zeros(n, d);
    (0..n)
        .map(|j| {
            let h = fd_step(x[j]);
            xp[j] = x[j] + h;
            model.diffusion(&xp, &mut bp);
            xp[j] = x[j] - h;
            model.diffusion(&xp, &mut bm);
            xp[j] = x[j];
            (&bp - &bm) / (2.0 * h)
        })
        .collect()
}

/// Writes `c(x)` into `out` given a precomputed `b = b(x)`.
pub fn correction_into(model: &dyn SdeModel, x: &[f64], b: &DMatrix<f64>, out: &mut [f64]) {
    let partials = model
        .diffusion_partials(x)
        .unwrap_or_else(|| diffusion_partials_fd(model, x));
    correction_from_parts(b, &partials, out);
}

/// Correction `c(x)` with `cⁱ(x) = −½ Σ_j Σ_k b^{j,k}(x) ∂b^{i,k}/∂x_j (x)`.
///
/// Uses the model's analytic partials when available and central finite
/// differences otherwise.
pub fn stratonovich_correction(model: &dyn SdeModel, x: &[f64]) -> DVector<f64> {
    let n = model.state_dim();
    let d = model.noise_dim();
    let mut b = DMatrix::zeros(n, d);
    model.diffusion(x, &mut b);
    let mut c = DVector::zeros(n);
    correction_into(model, x, &b, c.as_mut_slice());
    c
}

/// Correction computed from finite-difference partials even when analytic
/// ones exist.
pub fn stratonovich_correction_fd(model: &dyn SdeModel, x: &[f64]) -> DVector<f64> {
    let mut b = DMatrix::zeros(model.state_dim(), model.noise_dim());
    model.diffusion(x, &mut b);
    let mut c = DVector::zeros(model.state_dim());
    correction_from_parts(&b, &diffusion_partials_fd(model, x), c.as_mut_slice());
    c
}

fn correction_from_parts(b: &DMatrix<f64>, partials: &[DMatrix<f64>], out: &mut [f64]) {
    let (n, d) = b.shape();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, db) in partials.iter().enumerate() {
        for k in 0..d {
            let bjk = b[(j, k)];
            if bjk == 0.0 {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate().take(n) {
                *o -= 0.5 * bjk * db[(i, k)];
            }
        }
    }
}

/// Model whose drift is `a(x) + c(x)`, diffusion unchanged.
///
/// Solving the Wong–Zakai randomised ODE with this drift targets the Itô law
/// of the wrapped model.
#[derive(Clone)]
pub struct CorrectedDrift {
    inner: Arc<dyn SdeModel>,
}

impl CorrectedDrift {
    pub fn new(inner: Arc<dyn SdeModel>) -> Self {
        Self { inner }
    }

    pub fn inner(&self) -> &Arc<dyn SdeModel> {
        &self.inner
    }
}

/// Returns the Stratonovich-drift model whose solution has the Itô law of `model`.
pub fn ito_to_stratonovich_drift(model: Arc<dyn SdeModel>) -> CorrectedDrift {
    CorrectedDrift::new(model)
}

impl SdeModel for CorrectedDrift {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        self.inner.drift(x, out);
        let c = stratonovich_correction(self.inner.as_ref(), x);
        for (o, ci) in out.iter_mut().zip(c.iter()) {
            *o += ci;
        }
    }

    fn diffusion(&self, x: &[f64], out: &mut DMatrix<f64>) {
        self.inner.diffusion(x, out)
    }

    fn diffusion_partials(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        self.inner.diffusion_partials(x)
    }
}

/// Linear SDE `dX = A X dt + B dW` with constant `B`.
#[derive(Debug, Clone)]
pub struct LinearSde {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearSde {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        assert!(a.is_square() && a.nrows() == b.nrows());
        Self { a, b }
    }

    /// Scalar Ornstein–Uhlenbeck process `dX = −θ X dt + σ dW`.
    pub fn ornstein_uhlenbeck(theta: f64, sigma: f64) -> Self {
        Self::new(
            DMatrix::from_element(1, 1, -theta),
            DMatrix::from_element(1, 1, sigma),
        )
    }
}

/// Scalar OU model used as an exactly solvable reference.
pub fn linear_model(theta: f64, sigma: f64) -> LinearSde {
    LinearSde::ornstein_uhlenbeck(theta, sigma)
}

impl SdeModel for LinearSde {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn noise_dim(&self) -> usize {
        self.b.ncols()
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let n = self.a.nrows();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
        }
    }

    fn diffusion(&self, _x: &[f64], out: &mut DMatrix<f64>) {
        out.copy_from(&self.b);
    }

    fn drift_jacobian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }

    fn diffusion_partials(&self, _x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let (n, d) = self.b.shape();
        Some(vec![DMatrix::zeros(n, d); n])
    }
}

/// Unit in which a state or measurement angle is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AngleUnit {
    #[default]
    Radians,
    Degrees,
}

impl AngleUnit {
    /// Multiplier converting this unit to radians.
    pub fn to_radians(self) -> f64 {
        match self {
            AngleUnit::Radians => 1.0,
            AngleUnit::Degrees => PI / 180.0,
        }
    }
}

/// Seven-state turning aircraft with state-dependent diffusion.
///
/// State `(x₁..x₇)`: positions at indices 1,3,5 (one-based), velocities at
/// 2,4,6 and the turn rate at 7. The turn rate enters the drift multiplied by
/// `turn_rate_unit.to_radians()`. Each Brownian column `k` is scaled by
/// `√noise_variances[k]`, so `W` stays standard while the driving noise has
/// covariance `diag(noise_variances)·t`.
#[derive(Debug, Clone)]
pub struct AircraftModel {
    pub noise_variances: [f64; 4],
    pub turn_rate_unit: AngleUnit,
}

impl Default for AircraftModel {
    fn default() -> Self {
        Self {
            noise_variances: [1.0; 4],
            turn_rate_unit: AngleUnit::Radians,
        }
    }
}

/// Aircraft model with unit noise and the turn rate entering the drift as-is.
pub fn aircraft_model() -> AircraftModel {
    AircraftModel::default()
}

impl AircraftModel {
    pub fn new(noise_variances: [f64; 4], turn_rate_unit: AngleUnit) -> Self {
        Self {
            noise_variances,
            turn_rate_unit,
        }
    }

    /// Filtering-benchmark noise: `diag(10, 0.2, 0.2, q_w²)`.
    pub fn with_turn_noise(q_w: f64, turn_rate_unit: AngleUnit) -> Self {
        Self::new([10.0, 0.2, 0.2, q_w * q_w], turn_rate_unit)
    }

    fn col_scales(&self) -> [f64; 4] {
        self.noise_variances.map(f64::sqrt)
    }

    /// Unscaled diffusion entries and their log-derivatives with respect to
    /// `(x₂, x₄, x₆)`. Each nonzero entry is `±` a product of powers of the
    /// positive roots `√(1+x₂²)`, `√(1+x₄²)`, `√(1+x₆²)`, `v`, `v_xy`.
    fn entries(x: &[f64]) -> [(usize, usize, f64, [f64; 3]); 9] {
        let (x2, x4, x6) = (x[1], x[3], x[5]);
        let s2 = (1.0 + x2 * x2).sqrt();
        let s4 = (1.0 + x4 * x4).sqrt();
        let s6 = (1.0 + x6 * x6).sqrt();
        let v2 = 1.0 + x2 * x2 + x4 * x4 + x6 * x6;
        let u2 = 1.0 + x2 * x2 + x4 * x4;
        let v = v2.sqrt();
        let u = u2.sqrt();
        let ls2 = [x2 / (1.0 + x2 * x2), 0.0, 0.0];
        let ls4 = [0.0, x4 / (1.0 + x4 * x4), 0.0];
        let ls6 = [0.0, 0.0, x6 / (1.0 + x6 * x6)];
        let lv = [x2 / v2, x4 / v2, x6 / v2];
        let lu = [x2 / u2, x4 / u2, 0.0];
        let comb = |terms: &[(&[f64; 3], f64)]| {
            let mut g = [0.0; 3];
            for (t, sign) in terms {
                for k in 0..3 {
                    g[k] += sign * t[k];
                }
            }
            g
        };
        [
            (1, 0, s2 / v, comb(&[(&ls2, 1.0), (&lv, -1.0)])),
            (1, 1, s4 / u, comb(&[(&ls4, 1.0), (&lu, -1.0)])),
            (
                1,
                2,
                s2 * s6 / (v * u),
                comb(&[(&ls2, 1.0), (&ls6, 1.0), (&lv, -1.0), (&lu, -1.0)]),
            ),
            (3, 0, s4 / v, comb(&[(&ls4, 1.0), (&lv, -1.0)])),
            (3, 1, -s2 / u, comb(&[(&ls2, 1.0), (&lu, -1.0)])),
            (
                3,
                2,
                s4 * s6 / (v * u),
                comb(&[(&ls4, 1.0), (&ls6, 1.0), (&lv, -1.0), (&lu, -1.0)]),
            ),
            (5, 0, s6 / v, comb(&[(&ls6, 1.0), (&lv, -1.0)])),
            (5, 2, -u / v, comb(&[(&lu, 1.0), (&lv, -1.0)])),
            (6, 3, 1.0, [0.0; 3]),
        ]
    }
}

impl SdeModel for AircraftModel {
    fn state_dim(&self) -> usize {
        7
    }

    fn noise_dim(&self) -> usize {
        4
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let w = x[6] * self.turn_rate_unit.to_radians();
        out[0] = x[1];
        out[1] = -w * x[3];
        out[2] = x[3];
        out[3] = w * x[1];
        out[4] = x[5];
        out[5] = 0.0;
        out[6] = 0.0;
    }

    fn diffusion(&self, x: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        let scales = self.col_scales();
        for (i, k, val, _) in Self::entries(x) {
            out[(i, k)] = val * scales[k];
        }
    }

    fn drift_jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let c = self.turn_rate_unit.to_radians();
        let mut j = DMatrix::zeros(7, 7);
        j[(0, 1)] = 1.0;
        j[(1, 3)] = -c * x[6];
        j[(1, 6)] = -c * x[3];
        j[(2, 3)] = 1.0;
        j[(3, 1)] = c * x[6];
        j[(3, 6)] = c * x[1];
        j[(4, 5)] = 1.0;
        Some(j)
    }

    fn diffusion_partials(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let scales = self.col_scales();
        let mut parts = vec![DMatrix::zeros(7, 4); 7];
        for (i, k, val, dlog) in Self::entries(x) {
            for (slot, state_idx) in [1usize, 3, 5].into_iter().enumerate() {
                parts[state_idx][(i, k)] = val * dlog[slot] * scales[k];
            }
        }
        Some(parts)
    }
}

/// Radar returning range, azimuth and elevation of positions `(x₁, x₃, x₅)`.
///
/// Angles are reported in `angle_unit`.
#[derive(Debug, Clone)]
pub struct RadarMeasurement {
    r: DMatrix<f64>,
    pub angle_unit: AngleUnit,
}

impl RadarMeasurement {
    pub fn new(range_var: f64, azimuth_var: f64, elevation_var: f64, angle_unit: AngleUnit) -> Self {
        Self {
            r: DMatrix::from_diagonal(&DVector::from_vec(vec![range_var, azimuth_var, elevation_var])),
            angle_unit,
        }
    }
}

/// Radar with `R = diag(50, 0.1, 0.1)` and angles in radians.
pub fn radar_measurement() -> RadarMeasurement {
    RadarMeasurement::new(50.0, 0.1, 0.1, AngleUnit::Radians)
}

impl MeasurementModel for RadarMeasurement {
    fn obs_dim(&self) -> usize {
        3
    }

    fn observe(&self, x: &[f64]) -> DVector<f64> {
        let (p1, p3, p5) = (x[0], x[2], x[4]);
        let horiz = (p1 * p1 + p3 * p3).sqrt();
        let range = (horiz * horiz + p5 * p5).sqrt();
        let k = 1.0 / self.angle_unit.to_radians();
        DVector::from_vec(vec![range, p3.atan2(p1) * k, p5.atan2(horiz) * k])
    }

    fn noise_cov(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn residual(&self, y: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        let mut r = y - mu;
        let half_turn = PI / self.angle_unit.to_radians();
        r[1] = wrap(r[1], half_turn);
        r
    }
}

/// Wraps `a` into `(−half_turn, half_turn]`.
fn wrap(a: f64, half_turn: f64) -> f64 {
    let full = 2.0 * half_turn;
    let w = a - full * (a / full).round();
    if w <= -half_turn {
        w + full
    } else {
        w
    }
}

/// Linear observation `h(x) = H x`.
#[derive(Debug, Clone)]
pub struct LinearMeasurement {
    pub h: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LinearMeasurement {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        assert_eq!(h.nrows(), r.nrows());
        Self { h, r }
    }
}

impl MeasurementModel for LinearMeasurement {
    fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    fn observe(&self, x: &[f64]) -> DVector<f64> {
        &self.h * DVector::from_column_slice(x)
    }

    fn noise_cov(&self) -> &DMatrix<f64> {
        &self.r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Geometric;

    impl SdeModel for Geometric {
        fn state_dim(&self) -> usize {
            1
        }
        fn noise_dim(&self) -> usize {
            1
        }
        fn drift(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn diffusion(&self, x: &[f64], out: &mut DMatrix<f64>) {
            out[(0, 0)] = x[0];
        }
    }

    const X0: [f64; 7] = [1000.0, 0.0, 2650.0, 150.0, 200.0, 0.0, 6.0];

    #[test]
    fn correction_of_linear_diffusion() {
        let c = stratonovich_correction(&Geometric, &[2.0]);
        assert!((c[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_diffusion_has_no_correction() {
        let m = LinearSde::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]),
            DMatrix::from_row_slice(2, 1, &[0.3, 1.0]),
        );
        let c = stratonovich_correction(&m, &[0.4, -2.0]);
        assert_eq!(c, DVector::zeros(2));
    }

    #[test]
    fn corrected_drift_examples() {
        let g = ito_to_stratonovich_drift(Arc::new(Geometric));
        let mut out = [0.0];
        g.drift(&[3.0], &mut out);
        assert!((out[0] + 1.5).abs() < 1e-9);

        let ou = ito_to_stratonovich_drift(Arc::new(linear_model(1.0, 2.0)));
        ou.drift(&[0.7], &mut out);
        assert_eq!(out[0], -0.7);
    }

    #[test]
    fn ou_basics() {
        let m = linear_model(1.0, 2f64.sqrt());
        let mut out = [1.0];
        m.drift(&[0.0], &mut out);
        assert_eq!(out[0], 0.0);
        // stationary variance σ²/(2θ)
        let s = m.b[(0, 0)];
        assert!((s * s / (2.0 * -m.a[(0, 0)]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn aircraft_drift_at_reference_state() {
        let m = aircraft_model();
        let mut out = [0.0; 7];
        m.drift(&X0, &mut out);
        assert_eq!(out, [0.0, -900.0, 150.0, 0.0, 0.0, 0.0, 0.0]);

        let deg = AircraftModel::new([1.0; 4], AngleUnit::Degrees);
        deg.drift(&X0, &mut out);
        assert!((out[1] + 900.0 * PI / 180.0).abs() < 1e-12);
    }

    #[test]
    fn aircraft_diffusion_structure() {
        let m = AircraftModel::new([50.0, 50.0, 50.0, 25.0], AngleUnit::Degrees);
        let mut b = DMatrix::zeros(7, 4);
        for x in [X0, [1.0, -30.0, 2.0, 80.0, 3.0, 12.0, -1.0]] {
            m.diffusion(&x, &mut b);
            for row in [0, 2, 4] {
                assert!(b.row(row).iter().all(|v| *v == 0.0));
            }
        }
        aircraft_model().diffusion(&X0, &mut b);
        assert_eq!(b[(6, 3)], 1.0);
        assert_eq!(b.row(6).iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn aircraft_analytic_partials_match_finite_differences() {
        let m = AircraftModel::new([50.0, 50.0, 50.0, 25.0], AngleUnit::Degrees);
        for x in [X0, [10.0, -3.0, 5.0, 0.5, 7.0, 2.0, 1.0], [0.0; 7]] {
            let analytic = m.diffusion_partials(&x).unwrap();
            let fd = diffusion_partials_fd(&m, &x);
            for (a, f) in analytic.iter().zip(fd.iter()) {
                assert!((a - f).amax() < 1e-6, "{a} vs {f}");
            }
            let c_an = stratonovich_correction(&m, &x);
            let mut b = DMatrix::zeros(7, 4);
            m.diffusion(&x, &mut b);
            let mut c_fd = vec![0.0; 7];
            correction_from_parts(&b, &fd, &mut c_fd);
            for i in 0..7 {
                assert!((c_an[i] - c_fd[i]).abs() <= 1e-4, "component {i}");
            }
        }
    }

    #[test]
    fn radar_axis_cases() {
        let r = radar_measurement();
        let y = r.observe(&[1000.0, 5.0, 0.0, 1.0, 0.0, 2.0, 3.0]);
        assert_eq!(y.as_slice(), &[1000.0, 0.0, 0.0]);
        let y = r.observe(&[0.0, 0.0, 1000.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((y[1] - PI / 2.0).abs() < 1e-15);
        assert_eq!(
            r.noise_cov(),
            &DMatrix::from_diagonal(&DVector::from_vec(vec![50.0, 0.1, 0.1]))
        );
        // second quadrant stays in the second quadrant
        let y = r.observe(&[-1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((y[1] - 3.0 * PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn azimuth_residual_wraps() {
        let r = radar_measurement();
        let y = DVector::from_vec(vec![0.0, PI - 0.1, 0.0]);
        let mu = DVector::from_vec(vec![0.0, -PI + 0.1, 0.0]);
        assert!((r.residual(&y, &mu)[1] + 0.2).abs() < 1e-12);
        let deg = RadarMeasurement::new(1.0, 1.0, 1.0, AngleUnit::Degrees);
        let y = DVector::from_vec(vec![0.0, 179.0, 0.0]);
        let mu = DVector::from_vec(vec![0.0, -179.0, 0.0]);
        assert!((deg.residual(&y, &mu)[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn radar_range_is_rotation_invariant() {
        let r = radar_measurement();
        let p = [300.0, 0.0, -400.0, 0.0, 1200.0, 0.0, 0.0];
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let q = [c * p[0] - s * p[2], 0.0, s * p[0] + c * p[2], 0.0, p[4], 0.0, 0.0];
        assert!((r.observe(&p)[0] - r.observe(&q)[0]).abs() < 1e-9);
    }
}
