//! Maximum-likelihood hyperparameter estimation.
//!
//! The optimizer works in transformed coordinates: mean parameters are left
//! as they are, covariance parameters and the noise variance are optimized in
//! log space. This matches the gradient coordinates reported by
//! [`log_marginal_likelihood`], so the optimizer uses that gradient directly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{log_marginal_likelihood, Dataset, GpModel, Hyperparameters};
use crate::kernel::KernelSpec;
use crate::mean::MeanSpec;

/// Log coordinates are kept inside `[-LOG_BOX, LOG_BOX]`; points outside are
/// rejected by the line search.
const LOG_BOX: f64 = 30.0;
/// Largest change of any coordinate in one line-search trial step.
const MAX_STEP: f64 = 2.0;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;
/// A run stops after this many consecutive iterations whose decrease of the
/// objective is below `STALL_REL_DECREASE` relative to its magnitude.
const STALL_ITERS: usize = 10;
const STALL_REL_DECREASE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_starts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Scale of the log-space perturbations of the extra starts.
    pub init_spread: f64,
    /// `true` freezes the entry of `[α; β; σ²]` at its initial value.
    pub fixed_mask: Option<Vec<bool>>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_starts: 5,
            max_iters: 500,
            grad_tol: 1e-6,
            init_spread: 1.0,
            fixed_mask: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, n_theta: usize) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::ConfigInvalid("n_starts must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) || !(self.init_spread >= 0.0) {
            return Err(Error::ConfigInvalid(
                "grad_tol must be positive and init_spread non-negative".into(),
            ));
        }
        if let Some(mask) = &self.fixed_mask {
            if mask.len() != n_theta {
                return Err(Error::ConfigInvalid(format!(
                    "fixed_mask has {} entries, model has {n_theta} parameters",
                    mask.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub theta_hat: Hyperparameters,
    pub lml: f64,
    /// `‖∇‖∞` of the log marginal likelihood over the free coordinates.
    pub grad_norm: f64,
    pub converged: bool,
    /// Starts that reached a finite terminal point.
    pub n_restarts_used: usize,
    /// Terminal log marginal likelihood of every start (`None` if it failed).
    pub start_lml: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Log,
}

/// Coordinate transform per entry of `[α; β; σ²]`.
pub fn transforms(mean: &MeanSpec, kernel: &KernelSpec) -> Vec<Transform> {
    let mut t = vec![Transform::Identity; mean.n_params()];
    t.extend(std::iter::repeat_n(Transform::Log, kernel.n_params()));
    t.push(Transform::Log);
    t
}

/// Maps `θ` into optimizer coordinates.
pub fn transform(mean: &MeanSpec, kernel: &KernelSpec, theta: &Hyperparameters) -> Result<Vec<f64>> {
    let (p, q) = (mean.n_params(), kernel.n_params());
    let flat = theta.to_vec();
    if flat.len() != p + q + 1 {
        return Err(Error::DimensionMismatch {
            context: "hyperparameters",
            expected: p + q + 1,
            got: flat.len(),
        });
    }
    transforms(mean, kernel)
        .into_iter()
        .zip(flat)
        .enumerate()
        .map(|(i, (t, v))| match t {
            Transform::Identity => Ok(v),
            Transform::Log if v > 0.0 && v.is_finite() => Ok(v.ln()),
            Transform::Log if i == p + q => Err(Error::InvalidHyperparameters(format!(
                "noise variance {v} must be positive"
            ))),
            Transform::Log => Err(Error::InvalidBeta {
                kind: "log-transformed",
                reason: format!("beta[{}] = {v} must be positive", i - p),
            }),
        })
        .collect()
}

/// Inverse of [`transform`].
pub fn untransform(mean: &MeanSpec, kernel: &KernelSpec, coords: &[f64]) -> Result<Hyperparameters> {
    let flat: Vec<f64> = transforms(mean, kernel)
        .into_iter()
        .zip(coords)
        .map(|(t, &c)| match t {
            Transform::Identity => c,
            Transform::Log => c.exp(),
        })
        .collect();
    Hyperparameters::from_slice(&flat, mean.n_params(), kernel.n_params())
}

/// Negative log marginal likelihood over the free coordinates.
struct Objective<'a> {
    mean: &'a MeanSpec,
    kernel: &'a KernelSpec,
    data: &'a Dataset,
    base: Vec<f64>,
    free: Vec<usize>,
    log_coord: Vec<bool>,
}

impl Objective<'_> {
    fn full(&self, z: &[f64]) -> Vec<f64> {
        let mut c = self.base.clone();
        for (k, &i) in self.free.iter().enumerate() {
            c[i] = z[k];
        }
        c
    }

    /// Raw `θ` from optimizer coordinates. Fixed entries are stored raw.
    fn theta(&self, coords: &[f64]) -> Result<Hyperparameters> {
        let flat: Vec<f64> = coords
            .iter()
            .zip(&self.log_coord)
            .map(|(&c, &is_log)| if is_log { c.exp() } else { c })
            .collect();
        Hyperparameters::from_slice(&flat, self.mean.n_params(), self.kernel.n_params())
    }

    /// `(−lml, −∇lml)` or `None` when the point is invalid or numerically broken.
    fn eval(&self, z: &[f64]) -> Option<(f64, DVector<f64>)> {
        let coords = self.full(z);
        if coords
            .iter()
            .zip(&self.log_coord)
            .any(|(c, &is_log)| !c.is_finite() || (is_log && c.abs() > LOG_BOX))
        {
            return None;
        }
        let theta = self.theta(&coords).ok()?;
        let model = GpModel::from_theta(self.mean, self.kernel, &theta).ok()?;
        let lml = log_marginal_likelihood(&model, self.data).ok()?;
        if !lml.value.is_finite() || lml.grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        let g = DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| -lml.grad[i]));
        Some((-lml.value, g))
    }
}

struct LocalOptimum {
    z: Vec<f64>,
    value: f64,
    grad_norm: f64,
    converged: bool,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// BFGS with a backtracking Armijo line search. Invalid trial points are
/// treated as a failed decrease.
fn bfgs(obj: &Objective, z0: Vec<f64>, max_iters: usize, grad_tol: f64) -> Option<LocalOptimum> {
    let n = z0.len();
    let (mut fx, mut gx) = obj.eval(&z0)?;
    let mut x = DVector::from_vec(z0);
    if n == 0 {
        return Some(LocalOptimum {
            z: vec![],
            value: fx,
            grad_norm: 0.0,
            converged: true,
        });
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut stalled = 0;
    let mut iters = 0;
    for _ in 0..max_iters {
        iters += 1;
        if inf_norm(&gx) <= grad_tol {
            break;
        }
        let mut d = -(&h * &gx);
        if d.dot(&gx) >= 0.0 {
            h = DMatrix::identity(n, n);
            fresh = true;
            d = -gx.clone();
        }
        let cap = inf_norm(&d);
        let mut t = if cap > MAX_STEP { MAX_STEP / cap } else { 1.0 };
        let slope = d.dot(&gx);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &d * t;
            if let Some((ft, gt)) = obj.eval(trial.as_slice()) {
                if ft <= fx + ARMIJO_C1 * t * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if fresh {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        let s = &xn - &x;
        let y = &gn - &gx;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        stalled = if fx - fnew <= STALL_REL_DECREASE * fx.abs().max(1.0) {
            stalled + 1
        } else {
            0
        };
        x = xn;
        fx = fnew;
        gx = gn;
        if stalled >= STALL_ITERS {
            break;
        }
    }
    let grad_norm = inf_norm(&gx);
    log::debug!("bfgs: {iters} iterations, objective {fx:.10}, |grad| {grad_norm:.3e}");
    Some(LocalOptimum {
        z: x.as_slice().to_vec(),
        value: fx,
        grad_norm,
        converged: grad_norm <= grad_tol,
    })
}

/// Multi-start maximization of the log marginal likelihood.
///
/// Start 0 is `init`; the others perturb the free coordinates of `init` in
/// transformed space by `init_spread · N(0, 1)` (mean parameters scaled by
/// `max(1, |α_j|)`). The start with the highest terminal likelihood wins;
/// ties go to the lowest start index.
pub fn fit_ml(
    mean: &MeanSpec,
    kernel: &KernelSpec,
    data: &Dataset,
    init: &Hyperparameters,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let (p, q) = (mean.n_params(), kernel.n_params());
    let n_theta = p + q + 1;
    cfg.validate(n_theta)?;
    GpModel::from_theta(mean, kernel, init)?;

    let ts = transforms(mean, kernel);
    let mask = cfg.fixed_mask.clone().unwrap_or_else(|| vec![false; n_theta]);
    let free: Vec<usize> = (0..n_theta).filter(|&i| !mask[i]).collect();

    // Fixed entries keep their raw value, so zero is allowed there (affine β).
    let flat = init.to_vec();
    let mut base = Vec::with_capacity(n_theta);
    for (i, (&t, &v)) in ts.iter().zip(&flat).enumerate() {
        base.push(match t {
            Transform::Identity => v,
            Transform::Log if !mask[i] => {
                if v > 0.0 {
                    v.ln()
                } else {
                    return Err(Error::InvalidHyperparameters(format!(
                        "free log-transformed parameter {i} has value {v}"
                    )));
                }
            }
            Transform::Log => v,
        });
    }
    let log_coord: Vec<bool> = ts
        .iter()
        .enumerate()
        .map(|(i, &t)| t == Transform::Log && !mask[i])
        .collect();
    let obj = Objective {
        mean,
        kernel,
        data,
        base: base.clone(),
        free: free.clone(),
        log_coord,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z_init: Vec<f64> = free.iter().map(|&i| base[i]).collect();
    let mut best: Option<LocalOptimum> = None;
    let mut start_lml = Vec::with_capacity(cfg.n_starts);
    for start in 0..cfg.n_starts {
        let z0: Vec<f64> = if start == 0 {
            z_init.clone()
        } else {
            free.iter()
                .zip(&z_init)
                .map(|(&i, &z)| {
                    let e: f64 = rng.sample(StandardNormal);
                    match ts[i] {
                        Transform::Log => z + cfg.init_spread * e,
                        Transform::Identity => z + cfg.init_spread * e * z.abs().max(1.0),
                    }
                })
                .collect()
        };
        let local = bfgs(&obj, z0, cfg.max_iters, cfg.grad_tol);
        start_lml.push(local.as_ref().map(|l| -l.value));
        if let Some(l) = local {
            if best.as_ref().is_none_or(|b| l.value < b.value) {
                best = Some(l);
            }
        }
    }
    let used = start_lml.iter().filter(|v| v.is_some()).count();
    let best = best.ok_or(Error::AllStartsFailed {
        starts: cfg.n_starts,
    })?;

    let mut theta_hat = obj.theta(&obj.full(&best.z))?;
    // Fixed entries come back bit-for-bit.
    let mut flat_hat = theta_hat.to_vec();
    for (i, m) in mask.iter().enumerate() {
        if *m {
            flat_hat[i] = flat[i];
        }
    }
    theta_hat = Hyperparameters::from_slice(&flat_hat, p, q)?;
    Ok(FitResult {
        theta_hat,
        lml: -best.value,
        grad_norm: best.grad_norm,
        converged: best.converged,
        n_restarts_used: used,
        start_lml,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::Points;

    #[test]
    fn transform_examples() {
        let mean = MeanSpec::constant(20.0);
        let kernel = KernelSpec::se(2.0, 0.8);
        let theta = Hyperparameters {
            alpha: vec![20.0],
            beta: vec![2.0, 0.8],
            sigma2: 4.0,
        };
        let c = transform(&mean, &kernel, &theta).unwrap();
        assert_eq!(c[0], 20.0);
        assert!((c[3] - 1.386_294_361_119_890_6).abs() < 1e-15);
        let back = untransform(&mean, &kernel, &c).unwrap();
        for (a, b) in back.to_vec().iter().zip(theta.to_vec()) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }

        let bad = Hyperparameters {
            beta: vec![2.0, 0.0],
            ..theta
        };
        assert!(matches!(transform(&mean, &kernel, &bad), Err(Error::InvalidBeta { .. })));
    }

    #[test]
    fn constant_mean_with_white_covariance_recovers_sample_mean() {
        let ys = vec![1.3, -0.4, 2.2, 0.9, 1.7, 0.1, -1.2, 3.0];
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64 * 10.0).collect();
        let data = Dataset::new(Points::scalars(xs), ys.clone()).unwrap();
        let mean = MeanSpec::constant(0.0);
        let kernel = KernelSpec::se(1e-6, 1.0);
        let init = Hyperparameters {
            alpha: vec![0.0],
            beta: vec![1e-6, 1.0],
            sigma2: 1.0,
        };
        let cfg = FitConfig {
            fixed_mask: Some(vec![false, true, true, true]),
            ..FitConfig::default()
        };
        let fit = fit_ml(&mean, &kernel, &data, &init, &cfg).unwrap();
        let sample_mean = ys.iter().sum::<f64>() / ys.len() as f64;
        assert!((fit.theta_hat.alpha[0] - sample_mean).abs() < 1e-4);
        assert!(fit.converged);
        assert!(fit.grad_norm <= 1e-6);
        assert_eq!(&fit.theta_hat.beta, &init.beta);
        assert_eq!(fit.theta_hat.sigma2, 1.0);
    }

    #[test]
    fn mask_length_checked() {
        let cfg = FitConfig {
            fixed_mask: Some(vec![true]),
            ..FitConfig::default()
        };
        assert!(cfg.validate(4).is_err());
        assert!(FitConfig {
            n_starts: 0,
            ..FitConfig::default()
        }
        .validate(4)
        .is_err());
    }

    #[test]
    fn fixed_zero_affine_parameter_is_allowed() {
        let data = Dataset::new(Points::scalars(vec![0.0, 1.0, 2.0]), vec![0.5, 1.0, 0.2]).unwrap();
        let mean = MeanSpec::zero();
        let kernel = KernelSpec::sum(vec![KernelSpec::se(1.0, 1.0), KernelSpec::affine(0.5, 0.0)]);
        let init = Hyperparameters {
            alpha: vec![],
            beta: vec![1.0, 1.0, 0.5, 0.0],
            sigma2: 0.5,
        };
        let cfg = FitConfig {
            n_starts: 1,
            fixed_mask: Some(vec![true, true, false, true, true]),
            ..FitConfig::default()
        };
        let fit = fit_ml(&mean, &kernel, &data, &init, &cfg).unwrap();
        assert_eq!(fit.theta_hat.beta[3], 0.0);
        assert_eq!(fit.theta_hat.beta[0], 1.0);
    }
}
