//! Command-line front end. `main.rs` only maps the outcome to an exit code.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bounds::{bound_report, check_joint_information_identity, hcrb, hcrb_hybrid_form};
use crate::datasets::{parse_co2_str, read_co2_file, VENDORED_CO2};
use crate::error::{Error, ErrorCategory, Result};
use crate::experiments::{run_and_write, run_co2, Co2Config, McExperimentConfig};
use crate::gp::{predict, Dataset, GpModel};
use crate::learning::{fit_ml, FitConfig, FitResult};
use crate::output::{write_csv, write_json};
use crate::points::Points;

/// Relative tolerance of `check-identity`.
pub const IDENTITY_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "gp-hcrb", version, about = "GP prediction bounds after hyperparameter learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Only print errors.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Print debug output.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn hyperparameters by maximum likelihood.
    Fit(FitArgs),
    /// Plug-in predictions and predictive variances.
    Predict(ModelArgs),
    /// BCRB and HCRB per test point.
    Bound(ModelArgs),
    /// Monte-Carlo experiment.
    Mc(ExperimentArgs),
    /// Mauna Loa CO2 study.
    Co2(Co2Args),
    /// Numerical self-check of the HCRB against the hybrid-information form.
    CheckIdentity(ModelArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model JSON (mean, kernel, theta).
    #[arg(long)]
    pub config: PathBuf,
    /// Training data CSV with header `x,y`.
    #[arg(long)]
    pub data: PathBuf,
    /// Test grid `from:to:n`.
    #[arg(long, conflicts_with = "test_csv", allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Test inputs CSV with an `x` column.
    #[arg(long)]
    pub test_csv: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Model template JSON; its theta is the optimizer start.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Optimizer settings JSON (defaults if absent).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Co2Args {
    #[arg(long)]
    pub config: PathBuf,
    /// NOAA-format file; overrides `data_path` in the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the optimizer seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn exit_code(cat: ErrorCategory) -> i32 {
    match cat {
        ErrorCategory::Config => 2,
        ErrorCategory::Numerical => 3,
        ErrorCategory::Data => 4,
    }
}

/// Reads a config file; any failure counts as a configuration error.
fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<GpModel> {
    GpModel::from_json_str(&read_config(path)?).map_err(|e| match e {
        Error::Json(j) => Error::ConfigInvalid(format!("{}: {j}", path.display())),
        other => other,
    })
}

fn load_data(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::InvalidData(format!("{} does not exist", path.display())));
    }
    Dataset::read_csv(path)
}

fn parse_grid(s: &str) -> Result<Points> {
    let bad = || Error::ConfigInvalid(format!("grid `{s}` is not `from:to:n`"));
    let parts: Vec<&str> = s.split(':').collect();
    let [from, to, n] = parts.as_slice() else {
        return Err(bad());
    };
    let from: f64 = from.trim().parse().map_err(|_| bad())?;
    let to: f64 = to.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if n == 0 || !from.is_finite() || !to.is_finite() {
        return Err(bad());
    }
    Ok(Points::linspace(from, to, n))
}

fn read_test_csv(path: &Path) -> Result<Points> {
    #[derive(serde::Deserialize)]
    struct Row {
        x: f64,
    }
    if !path.exists() {
        return Err(Error::InvalidData(format!("{} does not exist", path.display())));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let xs = rdr
        .deserialize::<Row>()
        .map(|r| r.map(|r| r.x))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if xs.is_empty() {
        return Err(Error::InvalidData("test CSV has no rows".into()));
    }
    Points::new(1, xs)
}

/// Test inputs from `--grid` or `--test-csv`; otherwise nine points spread
/// over the training range extended by one unit on each side.
fn test_points(args: &ModelArgs, data: &Dataset) -> Result<Points> {
    match (&args.grid, &args.test_csv) {
        (Some(g), _) => parse_grid(g),
        (None, Some(p)) => read_test_csv(p),
        (None, None) => {
            let xs = data.xs.coords();
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(Points::linspace(lo - 1.0, hi + 1.0, 9))
        }
    }
}

#[derive(Serialize)]
struct FitOutput<'a> {
    #[serde(flatten)]
    result: &'a FitResult,
    model: &'a GpModel,
}

#[derive(Serialize)]
struct PredictionRow {
    x: f64,
    fhat: f64,
    var: f64,
}

#[derive(Serialize)]
struct IdentityRow {
    x: f64,
    identity_abs: f64,
    identity_rel: f64,
    hcrb: f64,
    hcrb_alt: f64,
    alt_rel: f64,
}

#[derive(Serialize)]
struct IdentitySummary {
    max_identity_rel: f64,
    max_alt_rel: f64,
    tolerance: f64,
    pass: bool,
}

/// Runs one invocation. `Ok(code)` is the exit code for completed runs;
/// `check-identity` returns 3 when a residual exceeds the tolerance.
pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Fit(a) => {
            let template = load_model(&a.config)?;
            let mut cfg = match &a.fit {
                Some(p) => serde_json::from_str::<FitConfig>(&read_config(p)?)
                    .map_err(|e| Error::ConfigInvalid(e.to_string()))?,
                None => FitConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let data = load_data(&a.data)?;
            let res = fit_ml(&template.mean, &template.kernel, &data, &template.theta(), &cfg)?;
            let model = template.with_theta(&res.theta_hat)?;
            log::info!("lml {:.6}, converged {}", res.lml, res.converged);
            write_json(
                a.out.join("fit.json"),
                &FitOutput {
                    result: &res,
                    model: &model,
                },
            )?;
            Ok(0)
        }
        Command::Predict(a) => {
            let model = load_model(&a.config)?;
            let data = load_data(&a.data)?;
            let xs = test_points(a, &data)?;
            let rows: Vec<PredictionRow> = predict(&model, &data, &xs)?
                .iter()
                .enumerate()
                .map(|(t, p)| PredictionRow {
                    x: xs.get(t)[0],
                    fhat: p.fhat,
                    var: p.var,
                })
                .collect();
            write_csv(a.out.join("predictions.csv"), &rows)?;
            Ok(0)
        }
        Command::Bound(a) => {
            let model = load_model(&a.config)?;
            let data = load_data(&a.data)?;
            let xs = test_points(a, &data)?;
            write_csv(a.out.join("bounds.csv"), &bound_report(&model, &data, &xs)?)?;
            Ok(0)
        }
        Command::CheckIdentity(a) => {
            let model = load_model(&a.config)?;
            let data = load_data(&a.data)?;
            let xs = test_points(a, &data)?;
            let direct = hcrb(&model, &data, &xs)?;
            let mut rows = Vec::with_capacity(xs.len());
            for (t, h) in direct.iter().enumerate() {
                let x = xs.get(t);
                let id = check_joint_information_identity(&model, &data, x)?;
                let alt = hcrb_hybrid_form(&model, &data, x)?;
                rows.push(IdentityRow {
                    x: x[0],
                    identity_abs: id.abs,
                    identity_rel: id.rel,
                    hcrb: h.hcrb,
                    hcrb_alt: alt,
                    alt_rel: (alt - h.hcrb).abs() / h.hcrb.abs().max(f64::MIN_POSITIVE),
                });
            }
            let max_id = rows.iter().map(|r| r.identity_rel).fold(0.0, f64::max);
            let max_alt = rows.iter().map(|r| r.alt_rel).fold(0.0, f64::max);
            let pass = max_id <= IDENTITY_TOL && max_alt <= IDENTITY_TOL;
            write_csv(a.out.join("identity.csv"), &rows)?;
            write_json(
                a.out.join("identity.json"),
                &IdentitySummary {
                    max_identity_rel: max_id,
                    max_alt_rel: max_alt,
                    tolerance: IDENTITY_TOL,
                    pass,
                },
            )?;
            if pass {
                Ok(0)
            } else {
                eprintln!(
                    "gp-hcrb: identity residual {max_id:e} / hybrid-form residual {max_alt:e} above {IDENTITY_TOL:e}"
                );
                Ok(exit_code(ErrorCategory::Numerical))
            }
        }
        Command::Mc(a) => {
            let mut cfg = McExperimentConfig::from_json_str(&read_config(&a.config)?)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            run_and_write(&cfg, &a.out)?;
            Ok(0)
        }
        Command::Co2(a) => {
            let mut cfg = Co2Config::from_json_str(&read_config(&a.config)?)?;
            if let Some(s) = a.seed {
                cfg.fit.seed = s;
            }
            let records = match (&a.data, &cfg.data_path) {
                (Some(p), _) => read_co2_file(p),
                (None, Some(p)) => read_co2_file(p),
                (None, None) => parse_co2_str(VENDORED_CO2),
            }
            .map_err(|e| match e {
                Error::Io(io) => Error::InvalidData(io.to_string()),
                other => other,
            })?;
            let report = run_co2(&records, &cfg)?;
            log::info!(
                "coverage bcrb {:.3}, hcrb {:.3}",
                report.coverage_bcrb,
                report.coverage_hcrb
            );
            report.write(&a.out)?;
            Ok(0)
        }
    }
}
