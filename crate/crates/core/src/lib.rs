//! Continuous-discrete filtering for nonlinear SDEs with series-expanded
//! Brownian motion and the unscented transform.

pub mod basis;
pub mod bench;
pub mod config;
pub mod filters;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod randode;
pub mod sigma;
pub mod simulate;
pub mod stats;

pub use basis::{make_linear_optimal_basis, BasisFamily, BasisSpec, CoefficientBlock};
pub use filters::{run_filter, FilterConfig, FilterError, FilterRunResult, FilterVariant, ObservationSequence};
pub use linalg::SqrtKind;
pub use model::{
    aircraft_model, radar_measurement, AircraftModel, AngleUnit, GaussianBelief, MeasurementModel, RadarMeasurement,
    SdeModel,
};
pub use ode::{OdeMethod, SolverConfig};
pub use sigma::{SigmaRule, SigmaScheme};
