use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use seukf::bench::{self, Arm, BenchError, BenchReport};
use seukf::config::{ConfigError, ExperimentConfig};
use seukf::filters::run_filter;

#[derive(Parser)]
#[command(name = "seukf", version, about = "Continuous-discrete filtering experiments for nonlinear SDEs")]
struct Cli {
    /// TOML experiment configuration; built-in aircraft defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured number of runs (or paths for `simulate`).
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Marginal moment study: Euler–Maruyama against the series sampler.
    Simulate,
    /// Filter one observation file (`time,y1,...`).
    Filter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Variant::SeUkf)]
        variant: Variant,
        /// Turn-noise amplitude of the filter model; the first configured value by default.
        #[arg(long)]
        qw: Option<f64>,
    },
    /// Moment-ODE UKF against SE-UKF over the configured Q_W grid.
    Bench,
    /// SE-UKF with K re-projections per observation interval.
    Ksweep,
    /// SE-UKF with each configured basis family on paired data.
    BasisCompare,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    SeUkf,
    Ukf,
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Bench(BenchError),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(c) => CliError::Config(c),
            other => CliError::Bench(other),
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::aircraft(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = cli.runs {
        if matches!(cli.command, Command::Simulate) {
            cfg.study.paths = runs;
        } else {
            cfg.runs = runs;
        }
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(report: &BenchReport) {
    println!("{:<6} {:<16} {:<10} {:>5} {:>5} {:>10} {:>10}", "qw", "variant", "metric", "runs", "divs", "mean", "median");
    for a in &report.aggregates {
        println!(
            "{:<6} {:<16} {:<10} {:>5} {:>5} {:>10.2} {:>10.2}",
            a.qw, a.variant, a.metric, a.runs, a.divergences, a.mean, a.median
        );
    }
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    let out = cfg.out_dir();
    match &cli.command {
        Command::Simulate => {
            let study = bench::run_moment_study(&cfg)?;
            for r in &study.rows {
                println!("{:<8} x{} mean {:>10.2} std {:>10.2}", r.estimator, r.component, r.mean, r.std);
            }
            list(&bench::write_moment_study(&study, &out)?);
        }
        Command::Filter { data, variant, qw } => {
            let obs = bench::read_observations(data)?;
            let qw = qw.unwrap_or(cfg.model.qw[0]);
            let arm = match variant {
                Variant::SeUkf => Arm::se(&cfg),
                Variant::Ukf => Arm::baseline(),
            };
            let filter = arm.build(&cfg, qw)?;
            let result = run_filter(&cfg.prior.belief(), &obs, &filter);
            let path = out.join(format!("filter_{}.csv", arm.label()));
            bench::write_filter_result(&result, &path)?;
            if let Some(d) = &result.diverged {
                eprintln!("filter stopped at t = {} (observation {}): {}", d.time, d.step, d.error);
            }
            list(&[path]);
        }
        Command::Bench => emit(&bench::bench_filters(&cfg)?, &out)?,
        Command::Ksweep => emit(&bench::bench_k_sweep(&cfg)?, &out)?,
        Command::BasisCompare => emit(&bench::bench_basis_compare(&cfg)?, &out)?,
    }
    Ok(())
}

fn emit(report: &BenchReport, out: &Path) -> Result<(), CliError> {
    print_report(report);
    list(&bench::write_report(report, out)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Bench(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
