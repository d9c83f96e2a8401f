//! Monte Carlo ground truth: Euler–Maruyama paths, series-expansion samples,
//! synthetic tracking data and the marginal moment study.
//!
//! Randomness comes from ChaCha20 with one stream per path: stream `i` of seed
//! `s` depends only on `(s, i)`, so changing the path count or the thread
//! schedule never changes an existing path.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::basis::{BasisFamily, BasisSpec, CoefficientBlock};
use crate::filters::ObservationSequence;
use crate::linalg::{cholesky_sqrt, LinalgError};
use crate::model::{GaussianBelief, MeasurementModel, SdeModel};
use crate::ode::{OdeError, SolverConfig};
use crate::randode::solve_randomised_ode;
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state became non-finite at t = {0}")]
    NonFiniteState(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded family of independent per-path generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent family labelled by `tag` (e.g. one per experiment arm).
    pub fn derive(&self, tag: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(tag)))
    }

    /// Generator for path `index`.
    pub fn path(&self, index: u64) -> PathRng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        PathRng { seed: self.seed, index, rng }
    }
}

/// One path's generator; remembers where it came from.
#[derive(Debug, Clone)]
pub struct PathRng {
    pub seed: u64,
    pub index: u64,
    rng: ChaCha20Rng,
}

impl RngCore for PathRng {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn normals<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for z in out {
        *z = rng.sample(StandardNormal);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub seed: u64,
    pub path: u64,
}

/// Step sizes covering `[0, horizon]`; the last step is shortened when
/// `horizon / dt` is not an integer.
fn step_grid(horizon: f64, dt: f64) -> Result<(usize, f64), SimError> {
    if !(dt > 0.0) || !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(SimError::InvalidInput(format!("need dt > 0 and horizon ≥ 0, got dt={dt}, horizon={horizon}")));
    }
    let ratio = horizon / dt;
    let full = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) { ratio.round() } else { ratio.floor() };
    Ok((full as usize, horizon - full * dt))
}

/// Euler–Maruyama integrator that keeps its work buffers.
struct Euler<'a> {
    model: &'a dyn SdeModel,
    a: Vec<f64>,
    b: DMatrix<f64>,
    z: Vec<f64>,
}

impl<'a> Euler<'a> {
    fn new(model: &'a dyn SdeModel) -> Self {
        Self {
            model,
            a: vec![0.0; model.state_dim()],
            b: DMatrix::zeros(model.state_dim(), model.noise_dim()),
            z: vec![0.0; model.noise_dim()],
        }
    }

    fn step<R: Rng + ?Sized>(&mut self, x: &mut [f64], dt: f64, rng: &mut R) {
        self.model.drift(x, &mut self.a);
        self.model.diffusion(x, &mut self.b);
        normals(rng, &mut self.z);
        let sq = dt.sqrt();
        for (i, xi) in x.iter_mut().enumerate() {
            let noise: f64 = (0..self.z.len()).map(|k| self.b[(i, k)] * self.z[k]).sum();
            *xi += self.a[i] * dt + noise * sq;
        }
    }

    /// Advances `x` by `span` and checks the result is finite.
    fn advance<R: Rng + ?Sized>(&mut self, x: &mut [f64], t0: f64, span: f64, dt: f64, rng: &mut R) -> Result<(), SimError> {
        let (full, rest) = step_grid(span, dt)?;
        for j in 0..full {
            self.step(x, dt, rng);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFiniteState(t0 + (j + 1) as f64 * dt));
            }
        }
        if rest > 0.0 {
            self.step(x, rest, rng);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFiniteState(t0 + span));
            }
        }
        Ok(())
    }
}

/// Euler–Maruyama path on `[0, horizon]`, recording every grid point.
pub fn euler_maruyama(model: &dyn SdeModel, x0: &[f64], horizon: f64, dt: f64, rng: &mut PathRng) -> Result<Trajectory, SimError> {
    check_dim(model, x0)?;
    let (full, rest) = step_grid(horizon, dt)?;
    let mut euler = Euler::new(model);
    let mut x = x0.to_vec();
    let mut times = vec![0.0];
    let mut states = vec![DVector::from_column_slice(x0)];
    for j in 0..full {
        euler.step(&mut x, dt, rng);
        let t = (j + 1) as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState(t));
        }
        times.push(t);
        states.push(DVector::from_column_slice(&x));
    }
    if rest > 0.0 {
        euler.step(&mut x, rest, rng);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState(horizon));
        }
        times.push(horizon);
        states.push(DVector::from_column_slice(&x));
    }
    Ok(Trajectory { times, states, seed: rng.seed, path: rng.index })
}

/// Terminal value of an Euler–Maruyama path without storing the grid.
pub fn euler_terminal<R: Rng + ?Sized>(model: &dyn SdeModel, x0: &[f64], horizon: f64, dt: f64, rng: &mut R) -> Result<Vec<f64>, SimError> {
    check_dim(model, x0)?;
    let mut x = x0.to_vec();
    Euler::new(model).advance(&mut x, 0.0, horizon, dt, rng)?;
    Ok(x)
}

/// Draws `Z ~ N(0, I)` and solves the corrected randomised ODE to the basis
/// horizon.
pub fn series_expansion_path<R: Rng + ?Sized>(
    model: &dyn SdeModel,
    x0: &[f64],
    basis: &BasisSpec,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<Vec<f64>, SimError> {
    check_dim(model, x0)?;
    let mut flat = vec![0.0; basis.order() * model.noise_dim()];
    normals(rng, &mut flat);
    let coeffs = CoefficientBlock::from_flat(&flat, basis.order(), model.noise_dim());
    Ok(solve_randomised_ode(model, basis, &coeffs, x0, cfg, true)?)
}

fn check_dim(model: &dyn SdeModel, x0: &[f64]) -> Result<(), SimError> {
    if x0.len() != model.state_dim() {
        return Err(SimError::InvalidInput(format!(
            "initial state has {} entries, model expects {}",
            x0.len(),
            model.state_dim()
        )));
    }
    Ok(())
}

/// Settings of the marginal moment study.
#[derive(Debug, Clone)]
pub struct MomentStudyConfig {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub family: BasisFamily,
    pub orders: Vec<usize>,
    pub paths: usize,
    pub ode: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub estimator: String,
    pub component: usize,
    pub mean: f64,
    pub std: f64,
    /// Paths that failed and were left out.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QqRow {
    pub estimator: String,
    pub component: usize,
    pub probability: f64,
    pub euler: f64,
    pub series: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MomentStudy {
    pub rows: Vec<MomentRow>,
    pub qq: Vec<QqRow>,
}

impl MomentStudy {
    pub fn row(&self, estimator: &str, component: usize) -> Option<&MomentRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.component == component)
    }
}

/// Estimator label for a series sampler of order `n`.
pub fn series_label(n: usize) -> String {
    format!("N={n}")
}

fn summarise(label: &str, samples: &[Option<Vec<f64>>], dim: usize, rows: &mut Vec<MomentRow>) -> Vec<Vec<f64>> {
    let ok: Vec<&Vec<f64>> = samples.iter().flatten().collect();
    let failures = samples.len() - ok.len();
    (0..dim)
        .map(|c| {
            let col: Vec<f64> = ok.iter().map(|x| x[c]).collect();
            rows.push(MomentRow {
                estimator: label.to_string(),
                component: c + 1,
                mean: stats::mean(&col),
                std: stats::std_dev(&col),
                failures,
            });
            stats::sorted(&col)
        })
        .collect()
}

/// Compares terminal marginals of Euler–Maruyama and the series sampler for
/// each requested order. Component indices in the output are 1-based.
pub fn moment_study(model: &dyn SdeModel, cfg: &MomentStudyConfig, rng: &RngStream) -> Result<MomentStudy, SimError> {
    check_dim(model, &cfg.x0)?;
    if cfg.paths < 2 {
        return Err(SimError::InvalidInput("moment study needs at least two paths".into()));
    }
    let n = model.state_dim();
    let mut study = MomentStudy::default();

    let euler_rng = rng.derive(0);
    let euler: Vec<Option<Vec<f64>>> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| euler_terminal(model, &cfg.x0, cfg.horizon, cfg.dt, &mut euler_rng.path(i)).ok())
        .collect();
    let euler_sorted = summarise("euler", &euler, n, &mut study.rows);

    for &order in &cfg.orders {
        let basis = BasisSpec::new(cfg.family, cfg.horizon, order, 0.0)
            .map_err(|e| SimError::InvalidInput(e.to_string()))?;
        let series_rng = rng.derive(order as u64 + 1);
        let samples: Vec<Option<Vec<f64>>> = (0..cfg.paths as u64)
            .into_par_iter()
            .map(|i| series_expansion_path(model, &cfg.x0, &basis, &cfg.ode, &mut series_rng.path(i)).ok())
            .collect();
        let label = series_label(order);
        let series_sorted = summarise(&label, &samples, n, &mut study.rows);
        for c in 0..n {
            for q in 1..100 {
                let p = q as f64 / 100.0;
                study.qq.push(QqRow {
                    estimator: label.clone(),
                    component: c + 1,
                    probability: p,
                    euler: stats::quantile_sorted(&euler_sorted[c], p),
                    series: stats::quantile_sorted(&series_sorted[c], p),
                });
            }
        }
    }
    Ok(study)
}

/// Draws `x ~ N(m, P)`; a zero covariance returns `m` exactly.
pub fn sample_gaussian<R: Rng + ?Sized>(belief: &GaussianBelief, rng: &mut R) -> Result<DVector<f64>, SimError> {
    let l = cholesky_sqrt(&belief.cov)?;
    let mut z = DVector::zeros(belief.dim());
    normals(rng, z.as_mut_slice());
    Ok(&belief.mean + l * z)
}

/// Simulates a true path from the prior and noisy observations at
/// `spacing, 2·spacing, …`. The returned trajectory holds the states at time
/// zero and at each observation time.
pub fn synthesize_run(
    model: &dyn SdeModel,
    measurement: &dyn MeasurementModel,
    prior: &GaussianBelief,
    n_obs: usize,
    spacing: f64,
    dt: f64,
    rng: &mut PathRng,
) -> Result<(Trajectory, ObservationSequence), SimError> {
    if !(spacing > 0.0) {
        return Err(SimError::InvalidInput(format!("observation spacing must be positive, got {spacing}")));
    }
    let x0 = sample_gaussian(prior, rng)?;
    check_dim(model, x0.as_slice())?;
    let r_sqrt = cholesky_sqrt(measurement.noise_cov())?;
    let mut euler = Euler::new(model);
    let mut x = x0.as_slice().to_vec();
    let mut times = vec![prior.time];
    let mut states = vec![x0];
    let mut obs_values = Vec::with_capacity(n_obs);
    let mut eps = DVector::zeros(measurement.obs_dim());
    for k in 1..=n_obs {
        let t0 = prior.time + (k - 1) as f64 * spacing;
        euler.advance(&mut x, t0, spacing, dt, rng)?;
        normals(rng, eps.as_mut_slice());
        obs_values.push(measurement.observe(&x) + &r_sqrt * &eps);
        times.push(t0 + spacing);
        states.push(DVector::from_column_slice(&x));
    }
    let obs = ObservationSequence { times: times[1..].to_vec(), values: obs_values };
    Ok((Trajectory { times, states, seed: rng.seed, path: rng.index }, obs))
}
