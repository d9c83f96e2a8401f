//! Continuous-discrete Gaussian filters.
//!
//! Two prediction steps share one measurement update:
//!
//! * **SE-UKF**: one sigma-point transform over the augmented vector
//!   `(X₀, Z₁, …, Z_N)`, each point pushed through the randomised ODE to the
//!   end of the prediction segment.
//! * **Moment-ODE UKF**: integrates the predictive mean/covariance ODEs with
//!   sigma-point expectations re-evaluated at every stage.
//!
//! Any loss of positive definiteness or ODE failure is reported as a
//! [`FilterError`]; [`run_filter`] records it as a divergence instead of
//! aborting.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSpec, CoefficientBlock};
use crate::linalg::{spd_inverse, symmetrize, validate_covariance, LinalgError, SqrtKind};
use crate::model::{GaussianBelief, MeasurementModel, SdeModel};
use crate::ode::{solve_ivp, OdeError, SolverConfig};
use crate::randode::solve_randomised_ode;
use crate::sigma::{generate, sample_moments, transform_moments, SigmaError, SigmaRule, SigmaSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("covariance lost positive definiteness: {0}")]
    NotPositiveDefinite(LinalgError),
    #[error("ODE failure: {0}")]
    Ode(#[from] OdeError),
    #[error("sigma-point failure: {0}")]
    Sigma(SigmaError),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("basis error: {0}")]
    Basis(#[from] BasisError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl From<LinalgError> for FilterError {
    fn from(e: LinalgError) -> Self {
        FilterError::NotPositiveDefinite(e)
    }
}

impl From<SigmaError> for FilterError {
    fn from(e: SigmaError) -> Self {
        match e {
            SigmaError::Linalg(l) => FilterError::NotPositiveDefinite(l),
            other => FilterError::Sigma(other),
        }
    }
}

impl FilterError {
    /// Short machine-friendly label for reports.
    pub fn kind(&self) -> &'static str {
        match self {
            FilterError::NotPositiveDefinite(_) => "not_positive_definite",
            FilterError::Ode(_) => "ode_failure",
            FilterError::Sigma(_) => "sigma_failure",
            FilterError::SingularInnovation => "singular_innovation",
            FilterError::Basis(_) => "basis_error",
            FilterError::InvalidInput(_) => "invalid_input",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterVariant {
    SeUkf,
    MomentOdeUkf,
}

impl FilterVariant {
    pub fn name(self) -> &'static str {
        match self {
            FilterVariant::SeUkf => "se_ukf",
            FilterVariant::MomentOdeUkf => "moment_ode_ukf",
        }
    }
}

/// Where the measurement update takes its sigma points from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Reuse the propagated SE-UKF point cloud (one transform per interval).
    Propagated,
    /// Draw fresh points from the Gaussian predictive belief.
    Regenerate,
}

/// Everything a filter run needs.
#[derive(Clone)]
pub struct FilterConfig {
    pub model: Arc<dyn SdeModel>,
    pub measurement: Arc<dyn MeasurementModel>,
    /// Basis family and order; the horizon is reset to each prediction segment.
    pub basis: BasisSpec,
    pub rule: SigmaRule,
    pub ode: SolverConfig,
    pub subintervals: usize,
    pub variant: FilterVariant,
    pub update_mode: UpdateMode,
    /// Add the Stratonovich correction inside the randomised ODE (SE-UKF only).
    pub stratonovich_correction: bool,
}

impl FilterConfig {
    /// SE-UKF defaults: `α = 1, β = 0`, spread `n + λ = 7`, symmetric square
    /// root, Dormand–Prince, one segment per interval.
    pub fn se_ukf(model: Arc<dyn SdeModel>, measurement: Arc<dyn MeasurementModel>, basis: BasisSpec) -> Self {
        Self {
            model,
            measurement,
            basis,
            rule: SigmaRule::with_spread(7.0, SqrtKind::Symmetric),
            ode: SolverConfig::default(),
            subintervals: 1,
            variant: FilterVariant::SeUkf,
            update_mode: UpdateMode::Propagated,
            stratonovich_correction: true,
        }
    }

    /// Moment-ODE baseline: cubature rule, Cholesky root, fixed-step RK4.
    pub fn moment_ode(model: Arc<dyn SdeModel>, measurement: Arc<dyn MeasurementModel>, steps_per_unit_time: f64) -> Self {
        Self {
            model,
            measurement,
            // unused by this variant
            basis: BasisSpec::fourier_sine(1.0, 1).expect("valid basis"),
            rule: SigmaRule::cubature(SqrtKind::Cholesky),
            ode: SolverConfig::rk4(steps_per_unit_time),
            subintervals: 1,
            variant: FilterVariant::MomentOdeUkf,
            update_mode: UpdateMode::Regenerate,
            stratonovich_correction: false,
        }
    }

    fn check_prior(&self, prior: &GaussianBelief) -> Result<(), FilterError> {
        let n = self.model.state_dim();
        if prior.mean.len() != n || prior.cov.shape() != (n, n) {
            return Err(FilterError::InvalidInput(format!(
                "belief dimension {} does not match model dimension {n}",
                prior.mean.len()
            )));
        }
        Ok(())
    }
}

/// Sigma set over the augmented vector and the terminal state of each point.
#[derive(Debug, Clone)]
pub struct PropagatedCloud {
    pub set: SigmaSet,
    pub states: Vec<DVector<f64>>,
}

impl PropagatedCloud {
    /// Weighted mean and covariance of the terminal states.
    pub fn belief(&self, time: f64) -> Result<GaussianBelief, FilterError> {
        let n = self.states.first().map_or(0, |x| x.len());
        let mut mean = DVector::zeros(n);
        for (w, x) in self.set.w_mean.iter().zip(&self.states) {
            mean.axpy(*w, x, 1.0);
        }
        let mut cov = DMatrix::zeros(n, n);
        for (w, x) in self.set.w_cov.iter().zip(&self.states) {
            let dx = x - &mean;
            cov.ger(*w, &dx, &dx, 1.0);
        }
        let cov = symmetrize(&cov);
        validate_covariance(&cov)?;
        Ok(GaussianBelief::new(mean, cov, time))
    }
}

fn se_segment(prior: &GaussianBelief, cfg: &FilterConfig, basis: &BasisSpec) -> Result<PropagatedCloud, FilterError> {
    let model = cfg.model.as_ref();
    let n = model.state_dim();
    let d = model.noise_dim();
    let order = basis.order();
    let aug = n + order * d;

    let mut m = DVector::zeros(aug);
    m.rows_mut(0, n).copy_from(&prior.mean);
    let mut p = DMatrix::identity(aug, aug);
    p.view_mut((0, 0), (n, n)).copy_from(&prior.cov);
    let set = generate(&m, &p, &cfg.rule)?;

    let states = set
        .points
        .iter()
        .map(|pt| {
            let coeffs = CoefficientBlock::from_flat(&pt.as_slice()[n..], order, d);
            solve_randomised_ode(model, basis, &coeffs, &pt.as_slice()[..n], &cfg.ode, cfg.stratonovich_correction)
                .map(DVector::from_vec)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PropagatedCloud { set, states })
}

/// SE-UKF prediction returning the final segment's propagated cloud.
///
/// The horizon is split into `cfg.subintervals` equal segments; the belief is
/// re-Gaussianised between segments. Returns `None` for a zero horizon.
pub fn se_predict_cloud(
    prior: &GaussianBelief,
    cfg: &FilterConfig,
    horizon: f64,
) -> Result<Option<(GaussianBelief, PropagatedCloud)>, FilterError> {
    cfg.check_prior(prior)?;
    if !(horizon >= 0.0) {
        return Err(FilterError::InvalidInput(format!("negative horizon {horizon}")));
    }
    if horizon == 0.0 {
        return Ok(None);
    }
    let k = cfg.subintervals.max(1);
    let seg = horizon / k as f64;
    let basis = if cfg.basis.horizon() == seg {
        cfg.basis.clone()
    } else {
        cfg.basis.rescaled(seg)?
    };
    let mut belief = prior.clone();
    let mut last = None;
    for s in 0..k {
        let cloud = se_segment(&belief, cfg, &basis)?;
        belief = cloud.belief(prior.time + seg * (s + 1) as f64)?;
        last = Some(cloud);
    }
    belief.time = prior.time + horizon;
    Ok(last.map(|c| (belief, c)))
}

/// SE-UKF predictive belief `horizon` seconds after `prior`.
pub fn se_predict(prior: &GaussianBelief, cfg: &FilterConfig, horizon: f64) -> Result<GaussianBelief, FilterError> {
    Ok(match se_predict_cloud(prior, cfg, horizon)? {
        Some((b, _)) => b,
        None => prior.clone(),
    })
}

/// Moment-ODE prediction of mean and covariance.
pub fn moment_ode_predict(prior: &GaussianBelief, cfg: &FilterConfig, horizon: f64) -> Result<GaussianBelief, FilterError> {
    cfg.check_prior(prior)?;
    if !(horizon >= 0.0) {
        return Err(FilterError::InvalidInput(format!("negative horizon {horizon}")));
    }
    if horizon == 0.0 {
        return Ok(prior.clone());
    }
    let model = cfg.model.as_ref();
    let n = model.state_dim();
    let d = model.noise_dim();
    let failure: RefCell<Option<FilterError>> = RefCell::new(None);

    let mut a = vec![0.0; n];
    let mut b = DMatrix::zeros(n, d);
    let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let m = DVector::from_column_slice(&y[..n]);
        let p = DMatrix::from_column_slice(n, n, &y[n..]);
        let set = match generate(&m, &p, &cfg.rule) {
            Ok(s) => s,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e.into());
                dy.fill(f64::NAN);
                return;
            }
        };
        let mut dm = DVector::<f64>::zeros(n);
        let mut dp = DMatrix::<f64>::zeros(n, n);
        for ((pt, wm), wc) in set.points.iter().zip(&set.w_mean).zip(&set.w_cov) {
            model.drift(pt.as_slice(), &mut a);
            model.diffusion(pt.as_slice(), &mut b);
            let av = DVector::from_column_slice(&a);
            let dx = pt - &m;
            dm.axpy(*wm, &av, 1.0);
            dp.ger(*wc, &av, &dx, 1.0);
            dp.ger(*wc, &dx, &av, 1.0);
            dp.gemm(*wm, &b, &b.transpose(), 1.0);
        }
        dy[..n].copy_from_slice(dm.as_slice());
        dy[n..].copy_from_slice(dp.as_slice());
    };

    let mut y0 = prior.mean.as_slice().to_vec();
    y0.extend_from_slice(prior.cov.as_slice());
    let result = solve_ivp(&mut rhs, &y0, prior.time, prior.time + horizon, &cfg.ode);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let y = result?;
    let mean = DVector::from_column_slice(&y[..n]);
    let cov = symmetrize(&DMatrix::from_column_slice(n, n, &y[n..]));
    validate_covariance(&cov)?;
    Ok(GaussianBelief::new(mean, cov, prior.time + horizon))
}

fn gain_update(
    pred_mean: &DVector<f64>,
    pred_cov: &DMatrix<f64>,
    obs_mean: &DVector<f64>,
    obs_cov: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    y: &DVector<f64>,
    measurement: &dyn MeasurementModel,
    time: f64,
) -> Result<GaussianBelief, FilterError> {
    if y.len() != measurement.obs_dim() {
        return Err(FilterError::InvalidInput(format!(
            "observation has {} entries, expected {}",
            y.len(),
            measurement.obs_dim()
        )));
    }
    let s = symmetrize(&(obs_cov + measurement.noise_cov()));
    let s_inv = spd_inverse(&s).map_err(|_| FilterError::SingularInnovation)?;
    let gain = cross * s_inv;
    let innovation = measurement.residual(y, obs_mean);
    let mean = pred_mean + &gain * innovation;
    let cov = symmetrize(&(pred_cov - &gain * s * gain.transpose()));
    validate_covariance(&cov)?;
    Ok(GaussianBelief::new(mean, cov, time))
}

/// Measurement update with fresh sigma points drawn from `pred`.
pub fn update(pred: &GaussianBelief, y: &DVector<f64>, cfg: &FilterConfig) -> Result<GaussianBelief, FilterError> {
    let set = generate(&pred.mean, &pred.cov, &cfg.rule)?;
    let meas = cfg.measurement.as_ref();
    let images: Vec<_> = set.points.iter().map(|x| meas.observe(x.as_slice())).collect();
    let tm = transform_moments(&set, &images)?;
    gain_update(&pred.mean, &pred.cov, &tm.mean, &tm.cov, &tm.cross, y, meas, pred.time)
}

/// Measurement update reusing propagated points: the observation moments
/// and cross-covariance come from `h` applied to the cloud's terminal states.
pub fn update_from_cloud(
    pred: &GaussianBelief,
    cloud: &PropagatedCloud,
    y: &DVector<f64>,
    cfg: &FilterConfig,
) -> Result<GaussianBelief, FilterError> {
    let meas = cfg.measurement.as_ref();
    let images: Vec<_> = cloud.states.iter().map(|x| meas.observe(x.as_slice())).collect();
    let (_, tm) = sample_moments(&cloud.set, &cloud.states, &images)?;
    gain_update(&pred.mean, &pred.cov, &tm.mean, &tm.cov, &tm.cross, y, meas, pred.time)
}

/// Observation times and values.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl ObservationSequence {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self, FilterError> {
        if times.len() != values.len() {
            return Err(FilterError::InvalidInput(format!(
                "{} times but {} observations",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FilterError::InvalidInput("observation times must increase strictly".into()));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub time: f64,
    /// Index of the observation being processed.
    pub step: usize,
    pub error: FilterError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRunResult {
    /// Posterior beliefs, one per processed observation.
    pub beliefs: Vec<GaussianBelief>,
    /// Predictive beliefs just before each update.
    pub predictive: Vec<GaussianBelief>,
    pub diverged: Option<Divergence>,
}

impl FilterRunResult {
    pub fn completed(&self) -> bool {
        self.diverged.is_none()
    }
}

/// One predict/update cycle ending at observation time `t`.
pub fn step(
    belief: &GaussianBelief,
    t: f64,
    y: &DVector<f64>,
    cfg: &FilterConfig,
) -> Result<(GaussianBelief, GaussianBelief), FilterError> {
    let horizon = t - belief.time;
    match cfg.variant {
        FilterVariant::SeUkf => match se_predict_cloud(belief, cfg, horizon)? {
            Some((pred, cloud)) if cfg.update_mode == UpdateMode::Propagated => {
                let post = update_from_cloud(&pred, &cloud, y, cfg)?;
                Ok((pred, post))
            }
            Some((pred, _)) => Ok((pred.clone(), update(&pred, y, cfg)?)),
            None => {
                let pred = GaussianBelief { time: t, ..belief.clone() };
                Ok((pred.clone(), update(&pred, y, cfg)?))
            }
        },
        FilterVariant::MomentOdeUkf => {
            let pred = moment_ode_predict(belief, cfg, horizon)?;
            let post = update(&pred, y, cfg)?;
            Ok((pred, post))
        }
    }
}

/// Runs the filter over all observations, stopping at the first failure.
pub fn run_filter(initial: &GaussianBelief, obs: &ObservationSequence, cfg: &FilterConfig) -> FilterRunResult {
    let mut result = FilterRunResult {
        beliefs: Vec::with_capacity(obs.len()),
        predictive: Vec::with_capacity(obs.len()),
        diverged: None,
    };
    let mut belief = initial.clone();
    for (k, (t, y)) in obs.times.iter().zip(&obs.values).enumerate() {
        let outcome = if *t < belief.time {
            Err(FilterError::InvalidInput(format!(
                "observation at {t} precedes belief time {}",
                belief.time
            )))
        } else {
            step(&belief, *t, y, cfg)
        };
        match outcome {
            Ok((pred, post)) => {
                result.predictive.push(pred);
                result.beliefs.push(post.clone());
                belief = post;
            }
            Err(error) => {
                result.diverged = Some(Divergence { time: *t, step: k, error });
                break;
            }
        }
    }
    result
}
