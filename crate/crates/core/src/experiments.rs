//! Monte-Carlo studies of the prediction MSE after hyperparameter learning,
//! and the Mauna Loa CO2 study.
//!
//! Each replicate draws `f` jointly over training and test inputs from the
//! true model, adds noise at the training inputs, learns `θ̂` by maximum
//! likelihood and records `(f⋆ − f̂⋆)²` for the plug-in predictor. Bounds at
//! the true `θ₀` are computed once; bounds at `θ̂` are averaged over the
//! replicates.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_report, hcrb_from_posterior};
use crate::datasets::{window, Co2Record, YearMonth};
use crate::error::{Error, Result};
use crate::gp::{sample_realization, Dataset, GpModel, Hyperparameters, PosteriorFactor};
use crate::learning::{fit_ml, FitConfig, FitResult};
use crate::output::{write_csv, write_json};
use crate::points::Points;

/// Environment variable capping the worker threads (`0` or unset = all cores).
pub const THREADS_ENV: &str = "GP_HCRB_THREADS";

/// Training inputs drawn once from `Uniform(low, high)`, sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformDesign {
    pub n: usize,
    pub low: f64,
    pub high: f64,
    pub seed: u64,
}

impl UniformDesign {
    pub fn points(&self) -> Result<Points> {
        if self.n == 0 || !(self.low < self.high) {
            return Err(Error::ConfigInvalid(
                "design needs n ≥ 1 and low < high".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut xs: Vec<f64> = (0..self.n).map(|_| rng.random_range(self.low..self.high)).collect();
        xs.sort_by(f64::total_cmp);
        Points::new(1, xs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TestGrid {
    Points(Vec<f64>),
    Grid { from: f64, to: f64, n: usize },
}

impl TestGrid {
    pub fn points(&self) -> Result<Points> {
        match self {
            TestGrid::Points(v) if !v.is_empty() => Points::new(1, v.clone()),
            TestGrid::Grid { from, to, n } if *n >= 1 && from.is_finite() && to.is_finite() => {
                Ok(Points::linspace(*from, *to, *n))
            }
            _ => Err(Error::ConfigInvalid("test grid is empty or not finite".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    /// All hyperparameters learned.
    #[default]
    FullLearn,
    /// Entries with `mask[i] = true` stay at the truth, the rest are learned.
    FixedSubset { mask: Vec<bool> },
    /// Data from `truth`, additionally fitted with an alternative model
    /// (typically zero mean with an affine kernel term).
    MarginalizedModel {
        model: GpModel,
        #[serde(default)]
        original_mask: Option<Vec<bool>>,
        #[serde(default)]
        marginal_mask: Option<Vec<bool>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McExperimentConfig {
    pub truth: GpModel,
    #[serde(default)]
    pub train_xs: Option<Vec<f64>>,
    #[serde(default)]
    pub design: Option<UniformDesign>,
    pub test_xs: TestGrid,
    pub n_mc: usize,
    #[serde(default)]
    pub fit: FitConfig,
    /// Optimizer start; defaults to the truth.
    #[serde(default)]
    pub init: Option<Hyperparameters>,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
}

impl McExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn train_points(&self) -> Result<Points> {
        match (&self.train_xs, &self.design) {
            (Some(xs), None) if !xs.is_empty() => Points::new(1, xs.clone()),
            (None, Some(d)) => d.points(),
            _ => Err(Error::ConfigInvalid(
                "give exactly one of `train_xs` (non-empty) and `design`".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 {
            return Err(Error::ConfigInvalid("n_mc must be at least 1".into()));
        }
        self.train_points()?;
        self.test_xs.points()?;
        let n_theta = self.truth.theta().len();
        self.fit.validate(n_theta)?;
        if let Some(init) = &self.init {
            GpModel::from_theta(&self.truth.mean, &self.truth.kernel, init)?;
        }
        let check_mask = |m: &Option<Vec<bool>>, n: usize| -> Result<()> {
            match m {
                Some(m) if m.len() != n => Err(Error::ConfigInvalid(format!(
                    "mask has {} entries, expected {n}",
                    m.len()
                ))),
                _ => Ok(()),
            }
        };
        match &self.variant {
            Variant::FullLearn => Ok(()),
            Variant::FixedSubset { mask } => check_mask(&Some(mask.clone()), n_theta),
            Variant::MarginalizedModel {
                model,
                original_mask,
                marginal_mask,
            } => {
                check_mask(original_mask, n_theta)?;
                check_mask(marginal_mask, model.theta().len())
            }
        }
    }
}

/// One row of `curves.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub x: f64,
    pub empirical_mse: f64,
    pub mc_se: f64,
    pub bcrb_truth: f64,
    pub hcrb_truth: f64,
    pub bcrb_fit_mean: f64,
    pub hcrb_fit_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCurves {
    pub rows: Vec<CurveRow>,
    pub n_mc: usize,
    /// Replicates that survived (fit and prediction succeeded).
    pub n_effective: usize,
    /// Dropped replicates by error kind.
    pub dropped: BTreeMap<String, usize>,
    pub fit_stats: FitStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct FitStats {
    pub converged_fraction: f64,
    pub mean_lml: f64,
    pub mean_restarts_used: f64,
    /// Per-coordinate mean of `θ̂` over surviving replicates.
    pub theta_hat_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub n_mc: usize,
    pub n_effective: usize,
    pub dropped: BTreeMap<String, usize>,
    pub fit_stats: FitStats,
    pub seed: u64,
    pub wall_time_s: f64,
}

/// Per-replicate results for one fitted model.
#[derive(Debug, Clone)]
struct ReplicateCurve {
    sq_err: Vec<f64>,
    bcrb: Vec<f64>,
    hcrb: Vec<f64>,
    fit: FitResult,
}

fn error_kind(e: &Error) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

/// Runs `f` on a pool sized by [`THREADS_ENV`].
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// RNG for replicate `rep`: the experiment seed with its own stream.
fn replicate_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Bounds at a fitted model on an existing posterior; a mean without
/// parameters has `hcrb = bcrb`.
fn bounds_on(post: &PosteriorFactor, p: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if p == 0 {
        let b = (0..post.n_test()).map(|t| post.variance(t)).collect::<Result<Vec<_>>>()?;
        return Ok((b.clone(), b));
    }
    let ing = hcrb_from_posterior(post)?;
    Ok((ing.iter().map(|i| i.bcrb).collect(), ing.iter().map(|i| i.hcrb).collect()))
}

fn fit_and_score(
    template: &GpModel,
    init: &Hyperparameters,
    fit: &FitConfig,
    data: &Dataset,
    test: &Points,
    f_test: &[f64],
) -> Result<ReplicateCurve> {
    let res = fit_ml(&template.mean, &template.kernel, data, init, fit)?;
    let model = template.with_theta(&res.theta_hat)?;
    let post = PosteriorFactor::new(&model, data, test)?;
    let sq_err: Vec<f64> = (0..test.len()).map(|t| (f_test[t] - post.fhat(t)).powi(2)).collect();
    if sq_err.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidData("non-finite squared error".into()));
    }
    let (bcrb, hcrb) = bounds_on(&post, model.mean.n_params())?;
    Ok(ReplicateCurve {
        sq_err,
        bcrb,
        hcrb,
        fit: res,
    })
}

struct Design {
    train: Points,
    test: Points,
    all: Points,
    noisy: Vec<usize>,
}

impl Design {
    fn new(cfg: &McExperimentConfig) -> Result<Self> {
        let train = cfg.train_points()?;
        let test = cfg.test_xs.points()?;
        let all = train.concat(&test)?;
        let noisy = (0..train.len()).collect();
        Ok(Design {
            train,
            test,
            all,
            noisy,
        })
    }

    /// Training data and noiseless test values of replicate `rep`.
    fn draw(&self, truth: &GpModel, rng: &mut ChaCha8Rng) -> Result<(Dataset, Vec<f64>)> {
        let r = sample_realization(truth, &self.all, &self.noisy, rng)?;
        let n = self.train.len();
        let data = Dataset::new(self.train.clone(), r.y.as_slice()[..n].to_vec())?;
        Ok((data, r.f.as_slice()[n..].to_vec()))
    }
}

/// Per-replicate fit configuration: the configured one with a mask and an
/// optimizer seed drawn from the replicate stream.
fn replicate_fit(base: &FitConfig, mask: Option<Vec<bool>>, rng: &mut ChaCha8Rng) -> FitConfig {
    FitConfig {
        fixed_mask: mask.or_else(|| base.fixed_mask.clone()),
        seed: base.seed ^ rng.next_u64(),
        ..base.clone()
    }
}

fn aggregate(
    x: &Points,
    truth_bounds: (&[f64], &[f64]),
    reps: &[std::result::Result<ReplicateCurve, String>],
) -> McCurves {
    let t_len = x.len();
    let ok: Vec<&ReplicateCurve> = reps.iter().filter_map(|r| r.as_ref().ok()).collect();
    let mut dropped = BTreeMap::new();
    for r in reps {
        if let Err(kind) = r {
            *dropped.entry(kind.clone()).or_insert(0) += 1;
        }
    }
    let n_eff = ok.len();
    let nf = n_eff as f64;
    let rows = (0..t_len)
        .map(|t| {
            let (mse, se, b, h) = if n_eff == 0 {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mse = ok.iter().map(|r| r.sq_err[t]).sum::<f64>() / nf;
                let se = if n_eff > 1 {
                    let var = ok.iter().map(|r| (r.sq_err[t] - mse).powi(2)).sum::<f64>() / (nf - 1.0);
                    (var / nf).sqrt()
                } else {
                    0.0
                };
                let b = ok.iter().map(|r| r.bcrb[t]).sum::<f64>() / nf;
                let h = ok.iter().map(|r| r.hcrb[t]).sum::<f64>() / nf;
                (mse, se, b, h)
            };
            CurveRow {
                x: x.get(t)[0],
                empirical_mse: mse,
                mc_se: se,
                bcrb_truth: truth_bounds.0[t],
                hcrb_truth: truth_bounds.1[t],
                bcrb_fit_mean: b,
                hcrb_fit_mean: h,
            }
        })
        .collect();
    let fit_stats = if n_eff == 0 {
        FitStats::default()
    } else {
        let n_theta = ok[0].fit.theta_hat.len();
        let mut theta_hat_mean = vec![0.0; n_theta];
        for r in &ok {
            for (m, v) in theta_hat_mean.iter_mut().zip(r.fit.theta_hat.to_vec()) {
                *m += v;
            }
        }
        theta_hat_mean.iter_mut().for_each(|m| *m /= nf);
        FitStats {
            converged_fraction: ok.iter().filter(|r| r.fit.converged).count() as f64 / nf,
            mean_lml: ok.iter().map(|r| r.fit.lml).sum::<f64>() / nf,
            mean_restarts_used: ok.iter().map(|r| r.fit.n_restarts_used as f64).sum::<f64>() / nf,
            theta_hat_mean,
        }
    };
    McCurves {
        rows,
        n_mc: reps.len(),
        n_effective: n_eff,
        dropped,
        fit_stats,
    }
}

fn truth_bounds(model: &GpModel, design: &Design, data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    // The bounds depend on the training inputs only, not on the targets.
    let rows = bound_report(model, data, &design.test)?;
    Ok((rows.iter().map(|r| r.bcrb).collect(), rows.iter().map(|r| r.hcrb).collect()))
}

/// Placeholder targets for bound evaluations that do not use `y`.
fn inputs_only(design: &Design) -> Result<Dataset> {
    Dataset::new(design.train.clone(), vec![0.0; design.train.len()])
}

/// Monte-Carlo MSE curves for the `full_learn` and `fixed_subset` variants.
pub fn run_mc(cfg: &McExperimentConfig) -> Result<McCurves> {
    cfg.validate()?;
    let mask = match &cfg.variant {
        Variant::FullLearn => None,
        Variant::FixedSubset { mask } => Some(mask.clone()),
        Variant::MarginalizedModel { .. } => {
            return Err(Error::ConfigInvalid(
                "marginalized_model configs run through run_marginalized_comparison".into(),
            ))
        }
    };
    let design = Design::new(cfg)?;
    let init = cfg.init.clone().unwrap_or_else(|| cfg.truth.theta());
    let tb = truth_bounds(&cfg.truth, &design, &inputs_only(&design)?)?;

    let reps: Vec<std::result::Result<ReplicateCurve, String>> = with_thread_pool(|| {
        (0..cfg.n_mc)
            .into_par_iter()
            .map(|rep| {
                let mut rng = replicate_rng(cfg.seed, rep);
                let mut run = || -> Result<ReplicateCurve> {
                    let (data, f_test) = design.draw(&cfg.truth, &mut rng)?;
                    let fit = replicate_fit(&cfg.fit, mask.clone(), &mut rng);
                    fit_and_score(&cfg.truth, &init, &fit, &data, &design.test, &f_test)
                };
                run().map_err(|e| {
                    log::debug!("replicate {rep} dropped: {e}");
                    error_kind(&e)
                })
            })
            .collect()
    })?;
    Ok(aggregate(&design.test, (&tb.0, &tb.1), &reps))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalizedComparison {
    /// Original model: empirical MSE and HCRB.
    pub original: McCurves,
    /// Marginalized model: empirical MSE, and the predictive variance in the
    /// bound columns (its mean has no parameters, so `hcrb = bcrb`).
    pub marginalized: McCurves,
    /// Per test point, the largest relative difference over the replicates
    /// between the marginalized predictive variance and the original HCRB,
    /// both at their fitted hyperparameters.
    pub max_rel_difference: Vec<f64>,
}

/// Fits the original and the marginalized model to the same data, which is
/// always drawn from the original model.
pub fn run_marginalized_comparison(cfg: &McExperimentConfig) -> Result<MarginalizedComparison> {
    cfg.validate()?;
    let Variant::MarginalizedModel {
        model: marg,
        original_mask,
        marginal_mask,
    } = &cfg.variant
    else {
        return Err(Error::ConfigInvalid(
            "run_marginalized_comparison needs a marginalized_model variant".into(),
        ));
    };
    let design = Design::new(cfg)?;
    let init = cfg.init.clone().unwrap_or_else(|| cfg.truth.theta());
    let marg_init = marg.theta();
    let placeholder = inputs_only(&design)?;
    let tb = truth_bounds(&cfg.truth, &design, &placeholder)?;
    let mb = truth_bounds(marg, &design, &placeholder)?;

    type Pair = (
        std::result::Result<ReplicateCurve, String>,
        std::result::Result<ReplicateCurve, String>,
    );
    let reps: Vec<Pair> = with_thread_pool(|| {
        (0..cfg.n_mc)
            .into_par_iter()
            .map(|rep| {
                let mut rng = replicate_rng(cfg.seed, rep);
                let drawn = design.draw(&cfg.truth, &mut rng);
                let fit_o = replicate_fit(&cfg.fit, original_mask.clone(), &mut rng);
                let fit_m = replicate_fit(&cfg.fit, marginal_mask.clone(), &mut rng);
                match drawn {
                    Err(e) => (Err(error_kind(&e)), Err(error_kind(&e))),
                    Ok((data, f_test)) => {
                        let o = fit_and_score(&cfg.truth, &init, &fit_o, &data, &design.test, &f_test);
                        let m = fit_and_score(marg, &marg_init, &fit_m, &data, &design.test, &f_test);
                        (o.map_err(|e| error_kind(&e)), m.map_err(|e| error_kind(&e)))
                    }
                }
            })
            .collect()
    })?;

    let t_len = design.test.len();
    let mut max_rel = vec![0.0f64; t_len];
    for (o, m) in &reps {
        if let (Ok(o), Ok(m)) = (o, m) {
            for t in 0..t_len {
                let d = (m.bcrb[t] - o.hcrb[t]).abs() / o.hcrb[t].abs().max(f64::MIN_POSITIVE);
                max_rel[t] = max_rel[t].max(d);
            }
        }
    }
    let (orig, margs): (Vec<_>, Vec<_>) = reps.into_iter().unzip();
    Ok(MarginalizedComparison {
        original: aggregate(&design.test, (&tb.0, &tb.1), &orig),
        marginalized: aggregate(&design.test, (&mb.0, &mb.1), &margs),
        max_rel_difference: max_rel,
    })
}

impl McCurves {
    pub fn summary(&self, seed: u64, wall_time_s: f64) -> McSummary {
        McSummary {
            n_mc: self.n_mc,
            n_effective: self.n_effective,
            dropped: self.dropped.clone(),
            fit_stats: self.fit_stats.clone(),
            seed,
            wall_time_s,
        }
    }

    /// Writes `curves.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, seed: u64, wall_time_s: f64) -> Result<()> {
        let dir = dir.as_ref();
        write_csv(dir.join("curves.csv"), &self.rows)?;
        write_json(dir.join("summary.json"), &self.summary(seed, wall_time_s))
    }
}

/// Runs whichever study the config describes and writes its artifacts. The
/// marginalized comparison writes into `original/` and `marginalized/`.
pub fn run_and_write(cfg: &McExperimentConfig, out_dir: impl AsRef<Path>) -> Result<()> {
    let out = out_dir.as_ref();
    let start = Instant::now();
    if matches!(cfg.variant, Variant::MarginalizedModel { .. }) {
        let cmp = run_marginalized_comparison(cfg)?;
        let wall = start.elapsed().as_secs_f64();
        cmp.original.write(out.join("original"), cfg.seed, wall)?;
        cmp.marginalized.write(out.join("marginalized"), cfg.seed, wall)?;
        #[derive(Serialize)]
        struct Row {
            x: f64,
            max_rel_difference: f64,
        }
        let rows: Vec<Row> = cmp
            .original
            .rows
            .iter()
            .zip(&cmp.max_rel_difference)
            .map(|(r, d)| Row {
                x: r.x,
                max_rel_difference: *d,
            })
            .collect();
        write_csv(out.join("comparison.csv"), &rows)
    } else {
        let curves = run_mc(cfg)?;
        curves.write(out, cfg.seed, start.elapsed().as_secs_f64())
    }
}

// ---------------------------------------------------------------------------
// CO2 study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Co2Config {
    /// NOAA-format file; the vendored snapshot when absent.
    #[serde(default)]
    pub data_path: Option<String>,
    pub train_from: YearMonth,
    pub train_to: YearMonth,
    pub valid_from: YearMonth,
    pub valid_to: YearMonth,
    /// Template model; its hyperparameters are the optimizer start.
    /// Inputs are measured in years since the start of the training window.
    pub model: GpModel,
    #[serde(default)]
    pub fit: FitConfig,
    /// Band half-width in standard deviations.
    #[serde(default = "default_band_k")]
    pub band_k: f64,
}

fn default_band_k() -> f64 {
    3.0
}

impl Co2Config {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// One validation month with both bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub decimal_date: f64,
    pub y: f64,
    pub fhat: f64,
    pub bcrb: f64,
    pub hcrb: f64,
    pub bcrb_lo: f64,
    pub bcrb_hi: f64,
    pub hcrb_lo: f64,
    pub hcrb_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Co2Report {
    pub rows: Vec<BandRow>,
    pub coverage_bcrb: f64,
    pub coverage_hcrb: f64,
    /// Training months with `|f̂ − y| ≤ k (σ²_{⋆|y} + σ²)^½`.
    pub in_sample_coverage: f64,
    pub n_train: usize,
    pub n_valid: usize,
    pub fit: FitResult,
    pub fitted_model: GpModel,
    pub input_origin: f64,
}

fn shifted(data: &Dataset, origin: f64) -> Result<Dataset> {
    let xs: Vec<f64> = data.xs.coords().iter().map(|x| x - origin).collect();
    Dataset::new(Points::scalars(xs), data.ys.as_slice().to_vec())
}

fn band_rows(model: &GpModel, train: &Dataset, target: &Dataset, origin: f64, k: f64) -> Result<Vec<BandRow>> {
    let rows = bound_report(model, train, &target.xs)?;
    Ok(rows
        .iter()
        .zip(target.ys.iter())
        .map(|(r, &y)| {
            let (sb, sh) = (r.bcrb.sqrt(), r.hcrb.sqrt());
            BandRow {
                decimal_date: r.x + origin,
                y,
                fhat: r.fhat,
                bcrb: r.bcrb,
                hcrb: r.hcrb,
                bcrb_lo: r.fhat - k * sb,
                bcrb_hi: r.fhat + k * sb,
                hcrb_lo: r.fhat - k * sh,
                hcrb_hi: r.fhat + k * sh,
            }
        })
        .collect())
}

fn coverage(rows: &[BandRow], lo: impl Fn(&BandRow) -> f64, hi: impl Fn(&BandRow) -> f64) -> f64 {
    let inside = rows.iter().filter(|r| lo(r) <= r.y && r.y <= hi(r)).count();
    inside as f64 / rows.len() as f64
}

/// Learns the model on the training window and scores both bands on the
/// validation window.
pub fn run_co2(records: &[Co2Record], cfg: &Co2Config) -> Result<Co2Report> {
    let train_raw = window(records, cfg.train_from, cfg.train_to)?;
    let valid_raw = window(records, cfg.valid_from, cfg.valid_to)?;
    let origin = cfg.train_from.year as f64;
    let train = shifted(&train_raw, origin)?;
    let valid = shifted(&valid_raw, origin)?;

    let tmpl = &cfg.model;
    let fit = fit_ml(&tmpl.mean, &tmpl.kernel, &train, &tmpl.theta(), &cfg.fit)?;
    let model = tmpl.with_theta(&fit.theta_hat)?;

    let rows = band_rows(&model, &train, &valid, origin, cfg.band_k)?;
    // Training targets carry observation noise, so the in-sample check uses
    // the predictive variance of y rather than of f.
    let in_sample = bound_report(&model, &train, &train.xs)?;
    let inside = in_sample
        .iter()
        .zip(train.ys.iter())
        .filter(|(r, &y)| (r.fhat - y).abs() <= cfg.band_k * (r.bcrb + model.sigma2).sqrt())
        .count();
    Ok(Co2Report {
        coverage_bcrb: coverage(&rows, |r| r.bcrb_lo, |r| r.bcrb_hi),
        coverage_hcrb: coverage(&rows, |r| r.hcrb_lo, |r| r.hcrb_hi),
        in_sample_coverage: inside as f64 / train.len() as f64,
        n_train: train.len(),
        n_valid: valid.len(),
        rows,
        fit,
        fitted_model: model,
        input_origin: origin,
    })
}

impl Co2Report {
    /// Writes `bands.csv` and `coverage.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_csv(dir.join("bands.csv"), &self.rows)?;
        #[derive(Serialize)]
        struct Coverage<'a> {
            coverage_bcrb: f64,
            coverage_hcrb: f64,
            in_sample_coverage: f64,
            n_train: usize,
            n_valid: usize,
            input_origin: f64,
            fit: &'a FitResult,
            fitted_model: &'a GpModel,
        }
        write_json(
            dir.join("coverage.json"),
            &Coverage {
                coverage_bcrb: self.coverage_bcrb,
                coverage_hcrb: self.coverage_hcrb,
                in_sample_coverage: self.in_sample_coverage,
                n_train: self.n_train,
                n_valid: self.n_valid,
                input_origin: self.input_origin,
                fit: &self.fit,
                fitted_model: &self.fitted_model,
            },
        )
    }
}
