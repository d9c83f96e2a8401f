//! Filtering benchmarks on simulated tracking data.
//!
//! Each run draws one true trajectory and observation sequence, then every
//! filter arm processes that same data. Data for run `i` at turn-noise `Q_W`
//! depends only on `(seed, Q_W, i)`, so different experiments with the same
//! seed see identical trajectories.

use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::basis::BasisFamily;
use crate::config::{BasisConfig, ConfigError, ExperimentConfig};
use crate::filters::{run_filter, FilterConfig, FilterRunResult, FilterVariant, ObservationSequence, UpdateMode};
use crate::model::AircraftModel;
use crate::simulate::{moment_study, synthesize_run, MomentStudy, MomentStudyConfig, RngStream, SimError, Trajectory};
use crate::stats;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("length mismatch: {truth} true states but {estimates} estimates")]
    LengthMismatch { truth: usize, estimates: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed for run {run}: {source}")]
    Simulation { run: usize, source: SimError },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("CSV error on {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

pub const METRICS: [&str; 3] = ["position", "velocity", "turn_rate"];

/// Position, velocity and turn-rate RMSE of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorTriple {
    pub position: f64,
    pub velocity: f64,
    pub turn_rate: f64,
}

impl ErrorTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.position, self.velocity, self.turn_rate]
    }

    fn nan() -> Self {
        Self { position: f64::NAN, velocity: f64::NAN, turn_rate: f64::NAN }
    }
}

/// RMSE over observation times for position (components 1,3,5), velocity
/// (2,4,6) and turn rate (7), normalised by the number of components.
pub fn rmse_components(truth: &[DVector<f64>], estimates: &[DVector<f64>]) -> Result<ErrorTriple, BenchError> {
    if truth.len() != estimates.len() {
        return Err(BenchError::LengthMismatch { truth: truth.len(), estimates: estimates.len() });
    }
    let groups: [&[usize]; 3] = [&[0, 2, 4], &[1, 3, 5], &[6]];
    let n = truth.len() as f64;
    let mut out = [0.0; 3];
    for (o, idx) in out.iter_mut().zip(groups) {
        let sq: f64 = truth
            .iter()
            .zip(estimates)
            .map(|(x, m)| idx.iter().map(|&c| (x[c] - m[c]).powi(2)).sum::<f64>())
            .sum();
        *o = (sq / (n * idx.len() as f64)).sqrt();
    }
    Ok(ErrorTriple { position: out[0], velocity: out[1], turn_rate: out[2] })
}

/// One filter configuration taking part in an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Arm {
    SeUkf { label: String, basis: BasisConfig, subintervals: usize },
    MomentOde { label: String },
}

impl Arm {
    pub fn label(&self) -> &str {
        match self {
            Arm::SeUkf { label, .. } | Arm::MomentOde { label } => label,
        }
    }

    pub fn se(cfg: &ExperimentConfig) -> Self {
        Arm::SeUkf { label: "se_ukf".into(), basis: cfg.basis.clone(), subintervals: cfg.bench.subintervals }
    }

    pub fn baseline() -> Self {
        Arm::MomentOde { label: "ukf".into() }
    }

    /// Filter configuration for turn-noise amplitude `qw`.
    pub fn build(&self, cfg: &ExperimentConfig, qw: f64) -> Result<FilterConfig, ConfigError> {
        let model = cfg.model.build(qw);
        let meas = cfg.measurement.build(cfg.model.name);
        Ok(match self {
            Arm::SeUkf { basis, subintervals, .. } => {
                let seg = cfg.bench.spacing / *subintervals as f64;
                FilterConfig {
                    model,
                    measurement: meas,
                    basis: basis.build(seg)?,
                    rule: cfg.sigma.build(),
                    ode: cfg.ode.build(),
                    subintervals: *subintervals,
                    variant: FilterVariant::SeUkf,
                    update_mode: UpdateMode::Propagated,
                    stratonovich_correction: true,
                }
            }
            Arm::MomentOde { .. } => {
                let mut f = FilterConfig::moment_ode(model, meas, cfg.sigma_baseline.steps_per_unit_time(qw));
                f.rule = cfg.sigma_baseline.rule();
                f
            }
        })
    }
}

/// Why a run counts as diverged, if it does.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// Position RMSE above the divergence threshold.
    ErrorThreshold,
    /// The filter stopped early; the payload is the failure kind.
    Failed(String),
}

impl RunStatus {
    pub fn diverged(&self) -> bool {
        *self != RunStatus::Ok
    }

    pub fn as_str(&self) -> &str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::ErrorThreshold => "error_threshold",
            RunStatus::Failed(kind) => kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub qw: f64,
    pub run: usize,
    pub variant: String,
    /// Errors over the steps completed before any failure (`NaN` if none).
    pub errors: ErrorTriple,
    pub status: RunStatus,
}

/// Statistics of one (Q_W, variant, metric) cell over non-diverged runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellSummary {
    pub runs: usize,
    pub divergences: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl CellSummary {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a RunRecord>, metric: usize) -> Self {
        let mut runs = 0;
        let mut values = Vec::new();
        for r in records {
            runs += 1;
            if !r.status.diverged() {
                values.push(r.errors.as_array()[metric]);
            }
        }
        let sorted = stats::sorted(&values);
        Self {
            runs,
            divergences: runs - values.len(),
            mean: stats::mean(&values),
            median: stats::quantile_sorted(&sorted, 0.5),
            q1: stats::quantile_sorted(&sorted, 0.25),
            q3: stats::quantile_sorted(&sorted, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub qw: f64,
    pub variant: String,
    pub metric: &'static str,
    pub runs: usize,
    pub divergences: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Quartiles of `ε_reference − ε_other` over runs where neither diverged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifferenceRow {
    pub qw: f64,
    pub reference: String,
    pub other: String,
    pub metric: &'static str,
    pub pairs: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub experiment: String,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub differences: Vec<DifferenceRow>,
}

impl BenchReport {
    fn records_for<'a>(&'a self, qw: f64, variant: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.records.iter().filter(move |r| r.qw == qw && r.variant == variant)
    }

    pub fn summary(&self, qw: f64, variant: &str, metric: usize) -> CellSummary {
        CellSummary::from_records(self.records_for(qw, variant), metric)
    }

    pub fn qws(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        for r in &self.records {
            if !v.contains(&r.qw) {
                v.push(r.qw);
            }
        }
        v
    }

    pub fn variants(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        for r in &self.records {
            if !v.contains(&r.variant) {
                v.push(r.variant.clone());
            }
        }
        v
    }

    fn finish(&mut self, pairs: &[(String, String)]) {
        let mut aggregates = Vec::new();
        let mut differences = Vec::new();
        for qw in self.qws() {
            for variant in self.variants() {
                for (m, metric) in METRICS.iter().enumerate() {
                    let s = self.summary(qw, &variant, m);
                    aggregates.push(AggregateRow {
                        qw,
                        variant: variant.clone(),
                        metric,
                        runs: s.runs,
                        divergences: s.divergences,
                        mean: s.mean,
                        median: s.median,
                        q1: s.q1,
                        q3: s.q3,
                    });
                }
            }
            for (reference, other) in pairs {
                let a: Vec<&RunRecord> = self.records_for(qw, reference).collect();
                let b: Vec<&RunRecord> = self.records_for(qw, other).collect();
                for (m, metric) in METRICS.iter().enumerate() {
                    let d: Vec<f64> = a
                        .iter()
                        .zip(&b)
                        .filter(|(x, y)| !x.status.diverged() && !y.status.diverged())
                        .map(|(x, y)| x.errors.as_array()[m] - y.errors.as_array()[m])
                        .collect();
                    let s = stats::sorted(&d);
                    differences.push(DifferenceRow {
                        qw,
                        reference: reference.clone(),
                        other: other.clone(),
                        metric,
                        pairs: d.len(),
                        q1: stats::quantile_sorted(&s, 0.25),
                        median: stats::quantile_sorted(&s, 0.5),
                        q3: stats::quantile_sorted(&s, 0.75),
                    });
                }
            }
        }
        self.aggregates = aggregates;
        self.differences = differences;
    }
}

/// Data-generating stream for one Q_W setting.
pub fn data_stream(seed: u64, qw: f64) -> RngStream {
    RngStream::new(seed).derive(qw.to_bits())
}

/// True trajectory and observations of run `run`.
pub fn simulate_run(cfg: &ExperimentConfig, qw: f64, run: usize) -> Result<(Trajectory, ObservationSequence), BenchError> {
    let model = cfg.model.build(qw);
    let meas = cfg.measurement.build(cfg.model.name);
    let prior = cfg.prior.belief();
    let mut rng = data_stream(cfg.seed, qw).path(run as u64);
    synthesize_run(model.as_ref(), meas.as_ref(), &prior, cfg.bench.n_obs, cfg.bench.spacing, cfg.bench.dt, &mut rng)
        .map_err(|source| BenchError::Simulation { run, source })
}

fn score(cfg: &ExperimentConfig, truth: &Trajectory, filter: &FilterConfig, obs: &ObservationSequence) -> (ErrorTriple, RunStatus) {
    let result = run_filter(&cfg.prior.belief(), obs, filter);
    let done = result.beliefs.len();
    let means: Vec<DVector<f64>> = result.beliefs.iter().map(|b| b.mean.clone()).collect();
    let errors = if done == 0 {
        ErrorTriple::nan()
    } else {
        rmse_components(&truth.states[1..=done], &means).expect("lengths agree by construction")
    };
    let status = match result.diverged {
        Some(d) => RunStatus::Failed(d.error.kind().to_string()),
        None if !(errors.position <= cfg.bench.divergence_threshold) => RunStatus::ErrorThreshold,
        None => RunStatus::Ok,
    };
    (errors, status)
}

/// Runs every arm on `runs` simulated data sets for each `qw`.
pub fn run_arms(cfg: &ExperimentConfig, qws: &[f64], arms: &[Arm], runs: usize) -> Result<Vec<RunRecord>, BenchError> {
    let mut records = Vec::with_capacity(qws.len() * arms.len() * runs);
    for &qw in qws {
        let filters = arms.iter().map(|a| a.build(cfg, qw)).collect::<Result<Vec<_>, _>>()?;
        let per_run: Vec<Vec<RunRecord>> = (0..runs)
            .into_par_iter()
            .map(|run| {
                let (truth, obs) = simulate_run(cfg, qw, run)?;
                Ok(arms
                    .iter()
                    .zip(&filters)
                    .map(|(arm, f)| {
                        let (errors, status) = score(cfg, &truth, f, &obs);
                        RunRecord { qw, run, variant: arm.label().to_string(), errors, status }
                    })
                    .collect())
            })
            .collect::<Result<_, BenchError>>()?;
        records.extend(per_run.into_iter().flatten());
    }
    Ok(records)
}

fn report(experiment: &str, records: Vec<RunRecord>, pairs: &[(String, String)]) -> BenchReport {
    let mut r = BenchReport { experiment: experiment.to_string(), records, ..Default::default() };
    r.finish(pairs);
    r
}

/// Moment-ODE UKF against SE-UKF over the configured Q_W grid.
pub fn bench_filters(cfg: &ExperimentConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let arms = [Arm::baseline(), Arm::se(cfg)];
    let records = run_arms(cfg, &cfg.model.qw, &arms, cfg.runs)?;
    Ok(report("bench", records, &[(arms[0].label().into(), arms[1].label().into())]))
}

/// Label of the SE-UKF arm with `k` segments per observation interval.
pub fn k_label(k: usize) -> String {
    format!("se_ukf_k{k}")
}

/// SE-UKF with `K` re-Gaussianisations per interval, plus the baseline on
/// the same data.
pub fn bench_k_sweep(cfg: &ExperimentConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let mut arms: Vec<Arm> = cfg
        .bench
        .ksweep
        .iter()
        .map(|&k| Arm::SeUkf { label: k_label(k), basis: cfg.basis.clone(), subintervals: k })
        .collect();
    arms.push(Arm::baseline());
    let records = run_arms(cfg, &[cfg.bench.ksweep_qw], &arms, cfg.runs)?;
    let pairs: Vec<(String, String)> = cfg.bench.ksweep.iter().map(|&k| ("ukf".to_string(), k_label(k))).collect();
    Ok(report("ksweep", records, &pairs))
}

pub fn family_label(f: BasisFamily) -> String {
    let name = match f {
        BasisFamily::FourierSine => "sine",
        BasisFamily::Haar => "haar",
        BasisFamily::LinearOptimal => "linear_optimal",
    };
    format!("se_ukf_{name}")
}

/// SE-UKF with each configured basis family on paired data.
pub fn bench_basis_compare(cfg: &ExperimentConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let arms: Vec<Arm> = cfg
        .bench
        .compare_families
        .iter()
        .map(|&family| Arm::SeUkf {
            label: family_label(family),
            basis: BasisConfig { family, ..cfg.basis.clone() },
            subintervals: cfg.bench.subintervals,
        })
        .collect();
    let records = run_arms(cfg, &[cfg.bench.compare_qw], &arms, cfg.runs)?;
    let pairs: Vec<(String, String)> = arms.windows(2).map(|w| (w[0].label().into(), w[1].label().into())).collect();
    Ok(report("basis_compare", records, &pairs))
}

/// Moment study with the configured aircraft settings.
pub fn run_moment_study(cfg: &ExperimentConfig) -> Result<MomentStudy, BenchError> {
    cfg.validate()?;
    let s = &cfg.study;
    let v = [s.noise_variances[0], s.noise_variances[1], s.noise_variances[2], s.noise_variances[3]];
    let model = AircraftModel::new(v, cfg.model.turn_rate_unit);
    let study_cfg = MomentStudyConfig {
        x0: s.x0.clone(),
        horizon: s.horizon,
        dt: s.dt,
        family: s.family,
        orders: s.orders.clone(),
        paths: s.paths,
        ode: cfg.ode.build(),
    };
    moment_study(&model, &study_cfg, &RngStream::new(cfg.seed)).map_err(|source| BenchError::Simulation { run: 0, source })
}

fn create(path: &Path) -> Result<csv::Writer<File>, BenchError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| BenchError::Io { path: parent.to_path_buf(), source })?;
    }
    csv::Writer::from_path(path).map_err(|source| BenchError::Csv { path: path.to_path_buf(), source })
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), BenchError> {
    let mut w = create(path)?;
    let wrap = |source| BenchError::Csv { path: path.to_path_buf(), source };
    for r in rows {
        w.serialize(r).map_err(wrap)?;
    }
    w.flush().map_err(|source| BenchError::Io { path: path.to_path_buf(), source })
}

#[derive(Serialize)]
struct LongRow<'a> {
    qw: f64,
    run: usize,
    variant: &'a str,
    metric: &'a str,
    value: f64,
    status: &'a str,
}

/// File stem for one experiment and Q_W value.
pub fn file_stem(experiment: &str, qw: f64) -> String {
    format!("{experiment}_qw{qw}")
}

/// Writes `<stem>_runs.csv`, `<stem>_aggregate.csv` and
/// `<stem>_differences.csv` for every Q_W in the report. Returns the paths.
pub fn write_report(report: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let mut paths = Vec::new();
    for qw in report.qws() {
        let stem = file_stem(&report.experiment, qw);
        let runs = dir.join(format!("{stem}_runs.csv"));
        write_rows(
            &runs,
            report.records.iter().filter(|r| r.qw == qw).flat_map(|r| {
                METRICS.iter().zip(r.errors.as_array()).map(move |(metric, value)| LongRow {
                    qw,
                    run: r.run,
                    variant: &r.variant,
                    metric,
                    value,
                    status: r.status.as_str(),
                })
            }),
        )?;
        let agg = dir.join(format!("{stem}_aggregate.csv"));
        write_rows(&agg, report.aggregates.iter().filter(|r| r.qw == qw))?;
        let diff = dir.join(format!("{stem}_differences.csv"));
        write_rows(&diff, report.differences.iter().filter(|r| r.qw == qw))?;
        paths.extend([runs, agg, diff]);
    }
    Ok(paths)
}

/// Writes `moments.csv` and `qq.csv`.
pub fn write_moment_study(study: &MomentStudy, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let moments = dir.join("moments.csv");
    write_rows(&moments, &study.rows)?;
    let qq = dir.join("qq.csv");
    write_rows(&qq, &study.qq)?;
    Ok(vec![moments, qq])
}

/// Writes a trajectory as `time,x1,…,xn`.
pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), BenchError> {
    let mut w = create(path)?;
    let wrap = |source| BenchError::Csv { path: path.to_path_buf(), source };
    let n = traj.states.first().map_or(0, |x| x.len());
    let mut header = vec!["time".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(wrap)?;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|source| BenchError::Io { path: path.to_path_buf(), source })
}

/// Reads observations from a CSV file with a header row and columns
/// `time, y1, …, ys`.
pub fn read_observations(path: &Path) -> Result<ObservationSequence, BenchError> {
    let wrap = |source| BenchError::Csv { path: path.to_path_buf(), source };
    let bad = |msg: String| BenchError::Io { path: path.to_path_buf(), source: std::io::Error::new(std::io::ErrorKind::InvalidData, msg) };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(wrap)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(wrap)?;
        let nums = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", line + 2)))?;
        if nums.len() < 2 {
            return Err(bad(format!("row {}: need a time and at least one value", line + 2)));
        }
        times.push(nums[0]);
        values.push(DVector::from_column_slice(&nums[1..]));
    }
    ObservationSequence::new(times, values).map_err(|e| bad(e.to_string()))
}

/// Writes predictive and posterior means and standard deviations as
/// `time, stage, m1…mn, sd1…sdn`, followed by a divergence note if any.
pub fn write_filter_result(result: &FilterRunResult, path: &Path) -> Result<(), BenchError> {
    let mut w = create(path)?;
    let wrap = |source| BenchError::Csv { path: path.to_path_buf(), source };
    let n = result.beliefs.first().map_or(0, |b| b.dim());
    let mut header = vec!["time".to_string(), "stage".to_string()];
    header.extend((1..=n).map(|i| format!("m{i}")));
    header.extend((1..=n).map(|i| format!("sd{i}")));
    w.write_record(&header).map_err(wrap)?;
    for (pred, post) in result.predictive.iter().zip(&result.beliefs) {
        for (stage, b) in [("predictive", pred), ("posterior", post)] {
            let mut row = vec![b.time.to_string(), stage.to_string()];
            row.extend(b.mean.iter().map(|v| v.to_string()));
            row.extend(b.cov.diagonal().iter().map(|v| v.sqrt().to_string()));
            w.write_record(&row).map_err(wrap)?;
        }
    }
    w.flush().map_err(|source| BenchError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn rmse_zero_for_exact_estimates() {
        let truth = vec![v(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]); 3];
        let e = rmse_components(&truth, &truth).unwrap();
        assert_eq!(e.as_array(), [0.0; 3]);
    }

    #[test]
    fn rmse_offset_in_one_position() {
        let truth = vec![v(&[0.0; 7]); 5];
        let est = vec![v(&[3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]); 5];
        let e = rmse_components(&truth, &est).unwrap();
        assert!((e.position - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!((e.velocity, e.turn_rate), (0.0, 0.0));
    }

    #[test]
    fn rmse_single_turn_error() {
        let e = rmse_components(&[v(&[0.0; 7])], &[v(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0])]).unwrap();
        assert_eq!(e.turn_rate, 2.0);
        assert!(matches!(rmse_components(&[v(&[0.0; 7])], &[]), Err(BenchError::LengthMismatch { .. })));
    }

    fn record(run: usize, variant: &str, pos: f64, status: RunStatus) -> RunRecord {
        RunRecord {
            qw: 0.5,
            run,
            variant: variant.into(),
            errors: ErrorTriple { position: pos, velocity: 1.0, turn_rate: 2.0 },
            status,
        }
    }

    #[test]
    fn summaries_skip_diverged_runs() {
        let recs = vec![
            record(0, "a", 1.0, RunStatus::Ok),
            record(1, "a", 3.0, RunStatus::Ok),
            record(2, "a", 2000.0, RunStatus::ErrorThreshold),
            record(3, "a", 5.0, RunStatus::Failed("ode_failure".into())),
        ];
        let s = CellSummary::from_records(&recs, 0);
        assert_eq!((s.runs, s.divergences), (4, 2));
        assert_eq!((s.mean, s.median), (2.0, 2.0));
        assert_eq!((s.q1, s.q3), (1.5, 2.5));
    }

    #[test]
    fn differences_use_pairs_where_both_completed() {
        let recs = vec![
            record(0, "a", 10.0, RunStatus::Ok),
            record(0, "b", 4.0, RunStatus::Ok),
            record(1, "a", 10.0, RunStatus::ErrorThreshold),
            record(1, "b", 1.0, RunStatus::Ok),
        ];
        let r = report("t", recs, &[("a".into(), "b".into())]);
        let d = &r.differences[0];
        assert_eq!((d.pairs, d.median), (1, 6.0));
        assert_eq!(r.aggregates.len(), 2 * 3);
    }

    #[test]
    fn report_files_round_trip() {
        let recs = vec![record(0, "a", 1.25, RunStatus::Ok), record(1, "a", 0.1 + 0.2, RunStatus::Ok)];
        let r = report("t", recs, &[]);
        let dir = tempfile::tempdir().unwrap();
        let paths = write_report(&r, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let mut rdr = csv::Reader::from_path(&paths[0]).unwrap();
        let values: Vec<f64> = rdr
            .records()
            .map(|r| r.unwrap())
            .filter(|r| &r[3] == "position")
            .map(|r| r[4].parse().unwrap())
            .collect();
        assert_eq!(values, vec![1.25, 0.1 + 0.2]);
        assert_eq!(stats::mean(&values), r.summary(0.5, "a", 0).mean);
    }

    #[test]
    fn observation_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        std::fs::write(&path, "time,y1,y2\n1.0, 2.0, 3.0\n2.0,4.0,5.0\n").unwrap();
        let obs = read_observations(&path).unwrap();
        assert_eq!(obs.times, vec![1.0, 2.0]);
        assert_eq!(obs.values[1], v(&[4.0, 5.0]));
        std::fs::write(&path, "time,y1\n2.0,1.0\n1.0,1.0\n").unwrap();
        assert!(read_observations(&path).is_err());
        std::fs::write(&path, "time,y1\n2.0,abc\n").unwrap();
        assert!(read_observations(&path).is_err());
        assert!(read_observations(&dir.path().join("missing.csv")).is_err());
    }
}
