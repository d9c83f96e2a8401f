//! Experiment configuration read from TOML.
//!
//! Every table rejects unknown keys. Missing keys take the defaults of the
//! aircraft tracking benchmark, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisFamily, BasisSpec};
use crate::linalg::SqrtKind;
use crate::model::{AircraftModel, AngleUnit, GaussianBelief, LinearMeasurement, LinearSde, MeasurementModel, RadarMeasurement, SdeModel};
use crate::ode::{OdeMethod, SolverConfig};
use crate::sigma::{Kappa, SigmaRule, SigmaScheme};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Aircraft,
    Ou,
}

/// Signal model. For the aircraft, the driving Brownian motion has
/// covariance `diag(noise_variances…, Q_W²)·t`, realised by scaling the
/// diffusion columns by the square roots of those entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub name: ModelName,
    /// Unit the turn-rate state is expressed in.
    pub turn_rate_unit: AngleUnit,
    /// Variances of the first three noise channels.
    pub noise_variances: [f64; 3],
    /// Turn-rate noise amplitudes swept by `bench`.
    pub qw: Vec<f64>,
    /// OU mean-reversion rate.
    pub theta: f64,
    /// OU noise amplitude.
    pub sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            name: ModelName::Aircraft,
            turn_rate_unit: AngleUnit::Degrees,
            noise_variances: [10.0, 0.2, 0.2],
            qw: vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.1],
            theta: 1.0,
            sigma: 1.0,
        }
    }
}

impl ModelConfig {
    /// Model instance for turn-rate amplitude `qw` (ignored for OU).
    pub fn build(&self, qw: f64) -> Arc<dyn SdeModel> {
        match self.name {
            ModelName::Aircraft => {
                let [a, b, c] = self.noise_variances;
                Arc::new(AircraftModel::new([a, b, c, qw * qw], self.turn_rate_unit))
            }
            ModelName::Ou => Arc::new(LinearSde::ornstein_uhlenbeck(self.theta, self.sigma)),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.name {
            ModelName::Aircraft => 7,
            ModelName::Ou => 1,
        }
    }
}

/// Radar for the aircraft, `y = x + noise` for OU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    pub range_variance: f64,
    pub azimuth_variance: f64,
    pub elevation_variance: f64,
    pub angle_unit: AngleUnit,
    /// Observation noise variance for the OU model.
    pub variance: f64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            range_variance: 50.0,
            azimuth_variance: 0.1,
            elevation_variance: 0.1,
            angle_unit: AngleUnit::Degrees,
            variance: 1.0,
        }
    }
}

impl MeasurementConfig {
    pub fn build(&self, model: ModelName) -> Arc<dyn MeasurementModel> {
        match model {
            ModelName::Aircraft => Arc::new(RadarMeasurement::new(
                self.range_variance,
                self.azimuth_variance,
                self.elevation_variance,
                self.angle_unit,
            )),
            ModelName::Ou => Arc::new(LinearMeasurement::new(
                DMatrix::identity(1, 1),
                DMatrix::from_element(1, 1, self.variance),
            )),
        }
    }
}

/// Independent Gaussian prior used both to draw true initial states and to
/// initialise the filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mean: vec![1000.0, 0.0, 2650.0, 150.0, 200.0, 0.0, 6.0],
            std: vec![100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 0.1],
        }
    }
}

impl PriorConfig {
    pub fn belief(&self) -> GaussianBelief {
        let var: Vec<f64> = self.std.iter().map(|s| s * s).collect();
        GaussianBelief::new(
            DVector::from_column_slice(&self.mean),
            DMatrix::from_diagonal(&DVector::from_vec(var)),
            0.0,
        )
    }
}

/// Series-expansion basis used by the SE-UKF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub family: BasisFamily,
    pub order: usize,
    /// Rate of the linear-optimal family.
    pub theta: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { family: BasisFamily::FourierSine, order: 8, theta: 1.0 }
    }
}

impl BasisConfig {
    pub fn build(&self, horizon: f64) -> Result<BasisSpec, ConfigError> {
        BasisSpec::new(self.family, horizon, self.order, self.theta).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// Solver for the SE-UKF randomised ODEs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    pub method: OdeMethod,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub steps_per_unit_time: f64,
    pub max_steps: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            method: OdeMethod::DormandPrince,
            rel_tol: 1e-6,
            abs_tol: 1e-6,
            steps_per_unit_time: 100.0,
            max_steps: 100_000,
        }
    }
}

impl OdeConfig {
    pub fn build(&self) -> SolverConfig {
        SolverConfig {
            method: self.method,
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            steps_per_unit_time: self.steps_per_unit_time,
            max_steps: self.max_steps,
        }
    }
}

/// Sigma-point tuning. `spread`, when set, overrides `kappa` with
/// `κ = spread − n` in whatever dimension the rule is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaConfig {
    pub scheme: SigmaScheme,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub spread: Option<f64>,
    pub sqrt: SqrtKind,
}

impl Default for SigmaConfig {
    fn default() -> Self {
        Self::se_default()
    }
}

impl SigmaConfig {
    pub fn se_default() -> Self {
        Self { scheme: SigmaScheme::ScaledUt, alpha: 1.0, beta: 0.0, kappa: 0.0, spread: Some(7.0), sqrt: SqrtKind::Symmetric }
    }

    pub fn build(&self) -> SigmaRule {
        let kappa = match self.spread {
            Some(s) => Kappa::SpreadTarget(s),
            None => Kappa::Fixed(self.kappa),
        };
        SigmaRule { scheme: self.scheme, alpha: self.alpha, kappa, beta: self.beta, sqrt_kind: self.sqrt }
    }
}

/// Moment-ODE baseline: sigma rule and RK4 step density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub scheme: SigmaScheme,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub sqrt: SqrtKind,
    /// RK4 steps per unit time are `steps_per_qw · Q_W` ...
    pub steps_per_qw: f64,
    /// ... but never fewer than this.
    pub min_steps_per_unit_time: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            scheme: SigmaScheme::Cubature,
            alpha: 1.0,
            beta: 0.0,
            kappa: 0.0,
            sqrt: SqrtKind::Cholesky,
            steps_per_qw: 200.0,
            min_steps_per_unit_time: 10.0,
        }
    }
}

impl BaselineConfig {
    pub fn rule(&self) -> SigmaRule {
        SigmaConfig { scheme: self.scheme, alpha: self.alpha, beta: self.beta, kappa: self.kappa, spread: None, sqrt: self.sqrt }
            .build()
    }

    pub fn steps_per_unit_time(&self, qw: f64) -> f64 {
        (self.steps_per_qw * qw).max(self.min_steps_per_unit_time)
    }
}

/// Data generation and scoring of the filtering benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_obs: usize,
    pub spacing: f64,
    /// Euler–Maruyama step for the true trajectories.
    pub dt: f64,
    /// Position RMSE above which a run counts as diverged.
    pub divergence_threshold: f64,
    /// Segments per observation interval for the main SE-UKF arm.
    pub subintervals: usize,
    pub ksweep: Vec<usize>,
    pub ksweep_qw: f64,
    pub compare_families: Vec<BasisFamily>,
    pub compare_qw: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_obs: 20,
            spacing: 8.0,
            dt: 0.005,
            divergence_threshold: 1000.0,
            subintervals: 1,
            ksweep: vec![1, 2, 4, 8, 16, 32],
            ksweep_qw: 1.1,
            compare_families: vec![BasisFamily::FourierSine, BasisFamily::Haar],
            compare_qw: 1.1,
        }
    }
}

/// The marginal moment study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub x0: Vec<f64>,
    /// Full noise covariance diagonal (all four channels).
    pub noise_variances: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub family: BasisFamily,
    pub orders: Vec<usize>,
    pub paths: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            x0: vec![1000.0, 0.0, 2650.0, 150.0, 200.0, 0.0, 6.0],
            noise_variances: vec![50.0, 50.0, 50.0, 25.0],
            horizon: 8.0,
            dt: 0.005,
            family: BasisFamily::FourierSine,
            orders: vec![1, 4, 6, 10],
            paths: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub runs: usize,
    pub out_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub measurement: MeasurementConfig,
    pub prior: PriorConfig,
    pub basis: BasisConfig,
    pub ode: OdeConfig,
    pub sigma: SigmaConfig,
    pub sigma_baseline: BaselineConfig,
    pub bench: BenchConfig,
    pub study: StudyConfig,
}

impl ExperimentConfig {
    /// Aircraft benchmark defaults with 100 runs per setting.
    pub fn aircraft() -> Self {
        Self { seed: 1, runs: 100, ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.model.state_dim();
        if self.prior.mean.len() != n || self.prior.std.len() != n {
            return invalid(format!("prior mean and std need {n} entries"));
        }
        if self.prior.std.iter().any(|s| !(*s >= 0.0)) {
            return invalid("prior std must be non-negative");
        }
        if self.model.qw.is_empty() || self.model.qw.iter().any(|q| !(*q >= 0.0)) {
            return invalid("model.qw must be a non-empty list of non-negative values");
        }
        if self.model.noise_variances.iter().any(|v| !(*v >= 0.0)) {
            return invalid("noise variances must be non-negative");
        }
        if self.basis.order == 0 {
            return invalid("basis.order must be at least 1");
        }
        if self.bench.n_obs == 0 || !(self.bench.spacing > 0.0) || !(self.bench.dt > 0.0) {
            return invalid("bench needs n_obs ≥ 1, spacing > 0 and dt > 0");
        }
        if self.bench.subintervals == 0 || self.bench.ksweep.contains(&0) {
            return invalid("subinterval counts must be at least 1");
        }
        if self.study.x0.len() != 7 || self.study.noise_variances.len() != 4 {
            return invalid("study.x0 needs 7 entries and study.noise_variances 4");
        }
        if self.study.orders.contains(&0) || self.study.paths < 2 {
            return invalid("study orders must be ≥ 1 and paths ≥ 2");
        }
        self.ode.build().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.basis.build(self.bench.spacing)?;
        Ok(())
    }

    /// Output directory, falling back to `results`.
    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.model.qw, vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.1]);
        assert_eq!(cfg.basis.order, 8);
        assert_eq!(cfg.sigma.build().lambda(7 + 8 * 4), 7.0 - 39.0);
        assert!((cfg.sigma_baseline.steps_per_unit_time(1.1) - 220.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3").is_err());
        assert!(ExperimentConfig::from_toml("[basis]\nfamilly = \"haar\"").is_err());
        assert!(ExperimentConfig::from_toml("[nonsense]\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 9
            runs = 3
            [model]
            qw = [0.5]
            turn_rate_unit = "radians"
            [basis]
            family = "haar"
            order = 4
            [sigma_baseline]
            scheme = "scaled_ut"
            kappa = 1.0
            steps_per_qw = 50
            "#,
        )
        .unwrap();
        assert_eq!((cfg.seed, cfg.runs), (9, 3));
        assert_eq!(cfg.model.turn_rate_unit, AngleUnit::Radians);
        assert_eq!(cfg.basis.family, BasisFamily::Haar);
        assert_eq!(cfg.sigma_baseline.rule().kappa, Kappa::Fixed(1.0));
        assert_eq!(cfg.sigma_baseline.steps_per_unit_time(0.5), 25.0);
    }

    #[test]
    fn inconsistent_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("[prior]\nmean = [1.0]").is_err());
        assert!(ExperimentConfig::from_toml("[basis]\norder = 0").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nqw = []").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nname = \"ou\"\n[prior]\nmean = [0.0]\nstd = [1.0]").is_ok());
    }

    #[test]
    fn built_objects_have_expected_shapes() {
        let cfg = ExperimentConfig::aircraft();
        let model = cfg.model.build(1.1);
        assert_eq!((model.state_dim(), model.noise_dim()), (7, 4));
        let meas = cfg.measurement.build(cfg.model.name);
        assert_eq!(meas.obs_dim(), 3);
        let prior = cfg.prior.belief();
        assert!((prior.cov[(6, 6)] - 0.01).abs() < 1e-15);
    }
}
