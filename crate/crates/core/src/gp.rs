//! Gaussian-process model: plug-in predictor, predictive variance, joint
//! moments of `[y; f⋆]`, log marginal likelihood and realizations.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram, GramBundle, KernelSpec};
use crate::linalg::{cholesky, sample_mvn, CholFactor, SymMatrix};
use crate::mean::{mean_eval, MeanJacobian, MeanSpec};
use crate::points::Points;

/// Rounding slack for predictive variances, relative to `max(1, k⋆⋆)`.
pub const VARIANCE_TOLERANCE: f64 = 1e-10;

/// `θ = [α; β; σ²]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

impl Hyperparameters {
    pub fn len(&self) -> usize {
        self.alpha.len() + self.beta.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flattened `[α; β; σ²]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.alpha.clone();
        v.extend_from_slice(&self.beta);
        v.push(self.sigma2);
        v
    }

    pub fn from_slice(v: &[f64], p: usize, q: usize) -> Result<Self> {
        if v.len() != p + q + 1 {
            return Err(Error::DimensionMismatch {
                context: "hyperparameter vector",
                expected: p + q + 1,
                got: v.len(),
            });
        }
        Ok(Hyperparameters {
            alpha: v[..p].to_vec(),
            beta: v[p..p + q].to_vec(),
            sigma2: v[p + q],
        })
    }
}

/// Training inputs and scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub xs: Points,
    pub ys: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct XyRow {
    x: f64,
    y: f64,
}

impl Dataset {
    pub fn new(xs: Points, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidData("dataset has no points".into()));
        }
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset targets",
                expected: xs.len(),
                got: ys.len(),
            });
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidData("non-finite target".into()));
        }
        Ok(Dataset {
            xs,
            ys: DVector::from_vec(ys),
        })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    /// Reads a CSV with header `x,y`.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        Self::from_reader(&mut rdr)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        Self::from_reader(&mut rdr)
    }

    fn from_reader<R: std::io::Read>(rdr: &mut csv::Reader<R>) -> Result<Self> {
        let headers = rdr.headers()?.clone();
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["x", "y"] {
            return Err(Error::InvalidData(format!(
                "dataset header must be `x,y`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut xs = vec![];
        let mut ys = vec![];
        for row in rdr.deserialize() {
            let row: XyRow = row?;
            xs.push(row.x);
            ys.push(row.y);
        }
        Dataset::new(Points::new(1, xs)?, ys)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        for (x, y) in self.xs.coords().iter().zip(self.ys.iter()) {
            w.serialize(XyRow { x: *x, y: *y })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Mean function, covariance function and noise variance bound together.
/// The mean and kernel specs carry `α` and `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    pub mean: MeanSpec,
    pub kernel: KernelSpec,
    pub sigma2: f64,
}

impl GpModel {
    pub fn new(mean: MeanSpec, kernel: KernelSpec, sigma2: f64) -> Result<Self> {
        let m = GpModel {
            mean,
            kernel,
            sigma2,
        };
        m.validate()?;
        Ok(m)
    }

    /// Builds a model from structural templates and a parameter vector.
    pub fn from_theta(mean: &MeanSpec, kernel: &KernelSpec, theta: &Hyperparameters) -> Result<Self> {
        GpModel::new(
            mean.with_alpha(&theta.alpha)?,
            kernel.with_params(&theta.beta)?,
            theta.sigma2,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.mean.validate()?;
        self.kernel.validate()?;
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(Error::InvalidHyperparameters(format!(
                "noise variance {} must be finite and non-negative",
                self.sigma2
            )));
        }
        Ok(())
    }

    pub fn theta(&self) -> Hyperparameters {
        Hyperparameters {
            alpha: self.mean.alpha.clone(),
            beta: self.kernel.params(),
            sigma2: self.sigma2,
        }
    }

    pub fn with_theta(&self, theta: &Hyperparameters) -> Result<Self> {
        GpModel::from_theta(&self.mean, &self.kernel, theta)
    }

    /// `(p, q)`: number of mean and covariance parameters.
    pub fn arity(&self) -> (usize, usize) {
        (self.mean.n_params(), self.kernel.n_params())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let repr: GpModelRepr = serde_json::from_str(s)?;
        repr.into_model()
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GpModelRepr::from_model(self))?)
    }
}

/// JSON layout `{"mean": .., "kernel": .., "theta": {"alpha", "beta", "sigma2"}}`.
#[derive(Serialize, Deserialize)]
pub(crate) struct GpModelRepr {
    mean: MeanSpec,
    kernel: KernelSpec,
    #[serde(default)]
    theta: Option<Hyperparameters>,
}

impl GpModelRepr {
    pub(crate) fn from_model(m: &GpModel) -> Self {
        GpModelRepr {
            mean: m.mean.clone(),
            kernel: m.kernel.clone(),
            theta: Some(m.theta()),
        }
    }

    pub(crate) fn into_model(self) -> Result<GpModel> {
        match self.theta {
            Some(theta) => GpModel::from_theta(&self.mean, &self.kernel, &theta),
            None => Err(Error::ConfigInvalid("model JSON lacks `theta`".into())),
        }
    }
}

impl Serialize for GpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GpModelRepr::from_model(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for GpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        GpModelRepr::deserialize(d)?
            .into_model()
            .map_err(serde::de::Error::custom)
    }
}

/// Everything the predictor, the bounds and the likelihood share for one
/// `(model, data, test points)` triple.
#[derive(Debug, Clone)]
pub struct PosteriorFactor {
    /// Factor of `Σ_y = K + σ²I`.
    pub chol: CholFactor,
    pub gram: GramBundle,
    pub train_mean: MeanJacobian,
    pub test_mean: MeanJacobian,
    /// `y − m`.
    pub resid: DVector<f64>,
    /// `Σ_y⁻¹ (y − m)`.
    pub alpha_solve: DVector<f64>,
    /// Column `t` is `ρ = Σ_y⁻¹ k⋆` for test point `t`.
    pub rho: DMatrix<f64>,
}

impl PosteriorFactor {
    pub fn new(model: &GpModel, data: &Dataset, xstars: &Points) -> Result<Self> {
        model.validate()?;
        let gram = gram(&model.kernel, &data.xs, xstars, false)?;
        Self::from_gram(model, data, xstars, gram)
    }

    fn from_gram(model: &GpModel, data: &Dataset, xstars: &Points, gram: GramBundle) -> Result<Self> {
        let sigma_y = gram.kmat.add_diagonal(model.sigma2);
        let chol = cholesky(&sigma_y)?;
        let train_mean = mean_eval(&model.mean, &data.xs)?;
        let test_mean = mean_eval(&model.mean, xstars)?;
        let resid = &data.ys - &train_mean.values;
        let alpha_solve = chol.solve_vec(&resid)?;
        let rho = chol.solve_mat(&gram.kstar)?;
        Ok(PosteriorFactor {
            chol,
            gram,
            train_mean,
            test_mean,
            resid,
            alpha_solve,
            rho,
        })
    }

    pub fn n_test(&self) -> usize {
        self.gram.kss.len()
    }

    /// `m⋆ + ρᵀ(y − m)` at test point `t`.
    pub fn fhat(&self, t: usize) -> f64 {
        self.test_mean.values[t] + self.gram.kstar.column(t).dot(&self.alpha_solve)
    }

    /// `σ²_{⋆|y} = k⋆⋆ − k⋆ᵀ Σ_y⁻¹ k⋆`, clamped to zero within rounding.
    pub fn variance(&self, t: usize) -> Result<f64> {
        let kss = self.gram.kss[t];
        let var = kss - self.gram.kstar.column(t).dot(&self.rho.column(t));
        clamp_variance(var, kss)
    }
}

pub(crate) fn clamp_variance(var: f64, kss: f64) -> Result<f64> {
    if var >= 0.0 {
        return Ok(var);
    }
    if var >= -VARIANCE_TOLERANCE * kss.abs().max(1.0) {
        log::warn!("clamping predictive variance {var:e} to zero");
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance(var))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub fhat: f64,
    pub var: f64,
}

/// Plug-in predictor and predictive variance at each test point.
pub fn predict(model: &GpModel, data: &Dataset, xstars: &Points) -> Result<Vec<Prediction>> {
    let post = PosteriorFactor::new(model, data, xstars)?;
    (0..post.n_test())
        .map(|t| {
            Ok(Prediction {
                fhat: post.fhat(t),
                var: post.variance(t)?,
            })
        })
        .collect()
}

/// Mean and covariance of `[y; f⋆]`.
#[derive(Debug, Clone)]
pub struct JointMoments {
    pub mu_bar: DVector<f64>,
    pub sigma_bar: SymMatrix,
}

pub fn joint_moments(model: &GpModel, data: &Dataset, xstar: &[f64]) -> Result<JointMoments> {
    model.validate()?;
    let xs1 = Points::new(data.xs.dim(), xstar.to_vec())?;
    let g = gram(&model.kernel, &data.xs, &xs1, false)?;
    let n = data.len();
    let train = mean_eval(&model.mean, &data.xs)?;
    let test = mean_eval(&model.mean, &xs1)?;
    let mut mu_bar = DVector::zeros(n + 1);
    mu_bar.rows_mut(0, n).copy_from(&train.values);
    mu_bar[n] = test.values[0];
    let sigma_bar = SymMatrix::from_upper(n + 1, |i, j| match (i < n, j < n) {
        (true, true) => g.kmat[(i, j)] + if i == j { model.sigma2 } else { 0.0 },
        (true, false) => g.kstar[(i, 0)],
        _ => g.kss[0],
    });
    Ok(JointMoments { mu_bar, sigma_bar })
}

/// Log marginal likelihood and its gradient.
///
/// Gradient coordinates: `α` entries are raw; every covariance parameter is
/// differentiated in `log β_i`; the noise entry is `∂/∂ log σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMarginal {
    pub value: f64,
    pub grad: Vec<f64>,
}

pub fn log_marginal_likelihood(model: &GpModel, data: &Dataset) -> Result<LogMarginal> {
    model.validate()?;
    let empty = Points::scalars(vec![]);
    let g = gram(&model.kernel, &data.xs, &empty, true)?;
    let dk = g.dk.clone();
    let post = PosteriorFactor::from_gram(model, data, &empty, g)?;
    let n = data.len() as f64;
    let a = &post.alpha_solve;
    let value = -0.5 * post.resid.dot(a)
        - 0.5 * post.chol.logdet()
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln();

    let mut grad = Vec::with_capacity(model.theta().len());
    // ∂/∂α = Jᵀ Σ_y⁻¹ (y − m)
    grad.extend(post.train_mean.jac.tr_mul(a).iter().copied());

    // ∂/∂θ_i = ½ tr((aaᵀ − Σ_y⁻¹) ∂Σ_y/∂θ_i)
    let mut q = a * a.transpose();
    q -= post.chol.inverse();
    let beta = model.kernel.params();
    for (d, b) in dk.iter().zip(&beta) {
        grad.push(0.5 * q.component_mul(d.as_matrix()).sum() * b);
    }
    grad.push(0.5 * q.trace() * model.sigma2);
    Ok(LogMarginal { value, grad })
}

/// Joint draw over a point set: `f ~ N(m, K)` and `y = f + ε` on `noisy` indices.
#[derive(Debug, Clone)]
pub struct Realization {
    pub f: DVector<f64>,
    pub y: DVector<f64>,
}

pub fn sample_realization<R: Rng + ?Sized>(
    model: &GpModel,
    xs_all: &Points,
    noisy: &[usize],
    rng: &mut R,
) -> Result<Realization> {
    model.validate()?;
    let g = gram(&model.kernel, xs_all, &Points::scalars(vec![]), false)?;
    let chol = cholesky(&g.kmat)?;
    let m = mean_eval(&model.mean, xs_all)?;
    let f = sample_mvn(&m.values, &chol, rng)?;
    let mut y = f.clone();
    let sd = model.sigma2.sqrt();
    for &i in noisy {
        if i >= y.len() {
            return Err(Error::DimensionMismatch {
                context: "noisy index",
                expected: y.len(),
                got: i,
            });
        }
        y[i] += sd * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(Realization { f, y })
}
