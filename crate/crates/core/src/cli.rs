//! Command-line front end: argument parsing, dispatch onto the experiment
//! drivers, CSV outputs and the run manifest.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{parse_mu, ConfigError, Manifest, Overrides, RunConfig};
use crate::datagen::{generate, sufficient_stats, RngStream};
use crate::error::EioError;
use crate::estimators::eio_fit;
use crate::experiments::{
    concentration_montecarlo, double_descent_records, double_descent_sweep, grid_search, ratio_bias_experiment,
    ratio_variance_experiment, ridge_comparison, Estimator, ExperimentContext, LambdaChoice,
    DOUBLE_DESCENT_MULTIPLIERS,
};
use crate::io::{render_concentration, render_fit, render_records, write_text, FitSummary, RecordSchema};
use crate::model::Mu;
use crate::theory::excess_risk;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorArg {
    Eio,
    Plugin,
    Ridge,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Eio => Estimator::Eio,
            EstimatorArg::Plugin => Estimator::Plugin,
            EstimatorArg::Ridge => Estimator::Ridge,
        }
    }
}

/// A runnable experiment, as stored in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name", deny_unknown_fields)]
pub enum Command {
    Fit,
    RatioBias,
    RatioVariance,
    GridSearch { estimator: EstimatorArg },
    DoubleDescent,
    RidgeCompare,
    ConcCheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::RatioBias => "ratio-bias",
            Command::RatioVariance => "ratio-variance",
            Command::GridSearch { .. } => "grid-search",
            Command::DoubleDescent => "double-descent",
            Command::RidgeCompare => "ridge-compare",
            Command::ConcCheck => "conc-check",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eio", version, about = "Error-in-operator regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Args, Clone, Default)]
struct CommonArgs {
    /// JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (falls back to $EIO_OUT_DIR, then ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores
    #[arg(long)]
    workers: Option<usize>,
    /// Dimension 200 and the full grids
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Positive number or `inf`
    #[arg(long, value_parser = parse_mu)]
    mu: Option<Mu>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            workers: self.workers,
            full_scale: self.full_scale,
            d: self.d,
            n: self.n,
            mu: self.mu,
            lambda: self.lambda,
            tau: self.tau,
            replicates: self.replicates,
        }
    }
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Fit the estimator on one generated dataset
    Fit(CommonArgs),
    /// Population bias ratio over the (mu, lambda) grid
    RatioBias(CommonArgs),
    /// Monte-Carlo variance ratio per n at the grid-optimal lambda
    RatioVariance(CommonArgs),
    /// Excess-risk table over a hyperparameter grid
    GridSearch {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "eio")]
        estimator: EstimatorArg,
    },
    /// Risk versus n for several lambda multipliers, mu = inf vs mu_opt
    DoubleDescent(CommonArgs),
    /// Grid-optimal estimator against grid-optimal ridge on common datasets
    RidgeCompare(CommonArgs),
    /// Concentration of the sample covariance and noise projection
    ConcCheck(CommonArgs),
    /// Re-run the command recorded in a manifest
    Rerun {
        manifest: PathBuf,
        /// Output directory (defaults to the manifest's)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{command}: {source}")]
    Experiment { command: &'static str, source: EioError },
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Output files and manifest of one completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
}

fn workers(cfg: &RunConfig) -> usize {
    if cfg.workers == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        cfg.workers
    }
}

fn context(cfg: &RunConfig) -> Result<ExperimentContext, ConfigError> {
    Ok(ExperimentContext::new(cfg.spec()?, cfg.hyperparams(), cfg.bound_config()?, workers(cfg)))
}

const RATIO_VARIANCE_N: [usize; 4] = [250, 500, 1000, 2000];
const RIDGE_COMPARE_N: [usize; 1] = [200];
const CONC_CHECK_N: [usize; 5] = [250, 500, 1000, 2000, 4000];

fn double_descent_n() -> Vec<usize> {
    (2..=12).map(|k| 10 * k).collect()
}

/// Runs `cmd` and returns `(file name, contents)` pairs; no file access.
pub fn render_command(cmd: Command, cfg: &RunConfig) -> Result<Vec<(String, String)>, CliError> {
    let ctx = context(cfg)?;
    let d = ctx.spec.dim();
    let wrap = |source| CliError::Experiment {
        command: cmd.name(),
        source,
    };
    let files = match cmd {
        Command::Fit => {
            let n = cfg.plan.n;
            let data = generate(&ctx.spec, n, RngStream::new(cfg.seed, 0)).map_err(wrap)?;
            let stats = sufficient_stats(&data, Some(&ctx.spec)).map_err(wrap)?;
            let hp = cfg.hyperparams();
            let report = eio_fit(&stats, &hp).map_err(wrap)?;
            let row = FitSummary {
                n,
                d,
                lambda: hp.lambda,
                mu: hp.mu,
                excess_risk: excess_risk(ctx.spec.sigma(), report.theta(), ctx.spec.theta_circ()),
                iterations: report.iterations,
                converged: report.converged,
                objective: report.objective_trace.last().copied().unwrap_or(f64::NAN),
            };
            vec![("fit.csv".to_string(), render_fit(&[row]))]
        }
        Command::RatioBias => {
            let records =
                ratio_bias_experiment(&ctx, &cfg.plan.mu_grid, &cfg.plan.lambda_grid).map_err(wrap)?;
            vec![("ratio_bias.csv".into(), render_records(&records, RecordSchema::Ratio))]
        }
        Command::RatioVariance => {
            let plan = cfg.sweep_plan(&RATIO_VARIANCE_N);
            let records =
                ratio_variance_experiment(&ctx, &plan, &LambdaChoice::Optimal, cfg.hyper.mu).map_err(wrap)?;
            vec![("ratio_variance.csv".into(), render_records(&records, RecordSchema::Ratio))]
        }
        Command::GridSearch { estimator } => {
            let plan = cfg.sweep_plan(&[cfg.plan.n]);
            let result = grid_search(&ctx, &plan, estimator.into(), cfg.plan.n).map_err(wrap)?;
            let name = format!("grid_search_{}.csv", result.estimator.name());
            vec![(name, render_records(&result.records(d), RecordSchema::Sweep))]
        }
        Command::DoubleDescent => {
            let plan = cfg.sweep_plan(&double_descent_n());
            let points = double_descent_sweep(&ctx, &plan, &DOUBLE_DESCENT_MULTIPLIERS).map_err(wrap)?;
            vec![(
                "double_descent.csv".into(),
                render_records(&double_descent_records(&points, d), RecordSchema::Sweep),
            )]
        }
        Command::RidgeCompare => {
            let plan = cfg.sweep_plan(&RIDGE_COMPARE_N);
            let records: Vec<_> = ridge_comparison(&ctx, &plan)
                .map_err(wrap)?
                .iter()
                .flat_map(|c| c.records(d))
                .collect();
            vec![("ridge_compare.csv".into(), render_records(&records, RecordSchema::Sweep))]
        }
        Command::ConcCheck => {
            let plan = cfg.sweep_plan(&CONC_CHECK_N);
            let result = concentration_montecarlo(&ctx, &plan).map_err(wrap)?;
            vec![("concentration.csv".into(), render_concentration(&result.records))]
        }
    };
    Ok(files)
}

/// Runs `cmd`, writes its CSV files and a manifest into the output directory.
pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    let files = render_command(cmd, cfg)?;
    let dir = cfg.resolved_output_dir();
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    let mut outputs = Vec::new();
    for (name, text) in &files {
        let path = dir.join(name);
        write_text(&path, text).map_err(io_err(&path))?;
        outputs.push(path);
    }
    let manifest = Manifest {
        command: serde_json::to_value(cmd).expect("command serializes"),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        outputs: files.iter().map(|(n, _)| n.clone()).collect(),
        config: cfg.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    write_text(&manifest_path, &manifest.to_json()).map_err(io_err(&manifest_path))?;
    Ok(RunOutcome {
        outputs,
        manifest: manifest_path,
    })
}

/// The command recorded in a manifest.
pub fn manifest_command(m: &Manifest) -> Result<Command, ConfigError> {
    serde_json::from_value(m.command.clone()).map_err(|e| ConfigError::Validation {
        field: "command".into(),
        reason: e.to_string(),
    })
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&common.overrides());
    cfg.validate()?;
    Ok(cfg)
}

fn resolve(cmd: CliCommand) -> Result<(Command, RunConfig), ConfigError> {
    let (command, common) = match cmd {
        CliCommand::Fit(c) => (Command::Fit, c),
        CliCommand::RatioBias(c) => (Command::RatioBias, c),
        CliCommand::RatioVariance(c) => (Command::RatioVariance, c),
        CliCommand::GridSearch { common, estimator } => (Command::GridSearch { estimator }, common),
        CliCommand::DoubleDescent(c) => (Command::DoubleDescent, c),
        CliCommand::RidgeCompare(c) => (Command::RidgeCompare, c),
        CliCommand::ConcCheck(c) => (Command::ConcCheck, c),
        CliCommand::Rerun { manifest, out, workers } => {
            let m = Manifest::from_path(&manifest)?;
            let mut cfg = m.config.clone();
            cfg.apply(&Overrides {
                out,
                workers,
                ..Default::default()
            });
            return Ok((manifest_command(&m)?, cfg));
        }
    };
    Ok((command, load_config(&common)?))
}

/// Entry point behind the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (cmd, cfg) = match resolve(cli.command) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let start = Instant::now();
    match run_command(cmd, &cfg) {
        Ok(outcome) => {
            for path in &outcome.outputs {
                eprintln!("{}: wrote {} ({:.1}s)", cmd.name(), path.display(), start.elapsed().as_secs_f64());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
