//! Parameterized mean functions `m_α(x)` with analytic parameter gradients.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::points::Points;

/// User-supplied mean function. Implementations must return the exact gradient
/// with respect to `alpha`, since the hybrid bound is built from it.
pub trait MeanFunction: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn n_params(&self) -> usize;

    /// Value `m_α(x)` and gradient `∂m/∂α` at a single point.
    fn eval(&self, alpha: &[f64], x: &[f64]) -> (f64, Vec<f64>);

    /// Basis `u(x)` when `m_α(x) = αᵀu(x)`, otherwise `None`.
    fn basis(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Clone)]
pub enum MeanKind {
    Zero,
    Constant,
    Linear,
    Affine,
    Sinusoid,
    Custom(Arc<dyn MeanFunction>),
}

impl MeanKind {
    pub fn n_params(&self) -> usize {
        match self {
            MeanKind::Zero => 0,
            MeanKind::Constant | MeanKind::Linear => 1,
            MeanKind::Affine => 2,
            MeanKind::Sinusoid => 3,
            MeanKind::Custom(f) => f.n_params(),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            MeanKind::Zero => "zero",
            MeanKind::Constant => "constant",
            MeanKind::Linear => "linear",
            MeanKind::Affine => "affine",
            MeanKind::Sinusoid => "sinusoid",
            MeanKind::Custom(f) => f.name(),
        }
    }

    fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "zero" => MeanKind::Zero,
            "constant" => MeanKind::Constant,
            "linear" => MeanKind::Linear,
            "affine" => MeanKind::Affine,
            "sinusoid" => MeanKind::Sinusoid,
            other => {
                return Err(Error::ConfigInvalid(format!("unknown mean kind `{other}`")))
            }
        })
    }
}

impl PartialEq for MeanKind {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (MeanKind::Custom(a), MeanKind::Custom(b)) => Arc::ptr_eq(a, b),
            (a, b) => std::mem::discriminant(a) == std::mem::discriminant(b),
        }
    }
}

/// A mean function kind together with its parameter vector `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSpec {
    pub kind: MeanKind,
    pub alpha: Vec<f64>,
}

/// Mean values at a point set and the `N × p` Jacobian `∂m(x_i)/∂α_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanJacobian {
    pub values: DVector<f64>,
    pub jac: DMatrix<f64>,
}

impl MeanSpec {
    pub fn new(kind: MeanKind, alpha: Vec<f64>) -> Result<Self> {
        let spec = MeanSpec { kind, alpha };
        spec.validate()?;
        Ok(spec)
    }

    pub fn zero() -> Self {
        MeanSpec {
            kind: MeanKind::Zero,
            alpha: vec![],
        }
    }

    pub fn constant(a: f64) -> Self {
        MeanSpec {
            kind: MeanKind::Constant,
            alpha: vec![a],
        }
    }

    pub fn linear(a: f64) -> Self {
        MeanSpec {
            kind: MeanKind::Linear,
            alpha: vec![a],
        }
    }

    pub fn affine(a0: f64, a1: f64) -> Self {
        MeanSpec {
            kind: MeanKind::Affine,
            alpha: vec![a0, a1],
        }
    }

    pub fn sinusoid(amplitude: f64, frequency: f64, phase: f64) -> Self {
        MeanSpec {
            kind: MeanKind::Sinusoid,
            alpha: vec![amplitude, frequency, phase],
        }
    }

    pub fn custom(f: Arc<dyn MeanFunction>, alpha: Vec<f64>) -> Result<Self> {
        MeanSpec::new(MeanKind::Custom(f), alpha)
    }

    pub fn n_params(&self) -> usize {
        self.kind.n_params()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "mean parameters",
                expected: self.n_params(),
                got: self.alpha.len(),
            });
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidHyperparameters(format!(
                "non-finite parameter in `{}` mean",
                self.kind.name()
            )));
        }
        Ok(())
    }

    /// Same kind with parameters replaced.
    pub fn with_alpha(&self, alpha: &[f64]) -> Result<Self> {
        MeanSpec::new(self.kind.clone(), alpha.to_vec())
    }

    /// Value and gradient at a single point.
    pub fn eval_point(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let a = &self.alpha;
        if let MeanKind::Custom(f) = &self.kind {
            return Ok(f.eval(a, x));
        }
        if x.len() != 1 {
            return Err(Error::UnsupportedDimension(x.len()));
        }
        let x = x[0];
        Ok(match self.kind {
            MeanKind::Zero => (0.0, vec![]),
            MeanKind::Constant => (a[0], vec![1.0]),
            MeanKind::Linear => (a[0] * x, vec![x]),
            MeanKind::Affine => (a[0] + a[1] * x, vec![1.0, x]),
            MeanKind::Sinusoid => {
                let phase = a[1] * x + a[2];
                let (s, c) = phase.sin_cos();
                (a[0] * s, vec![s, a[0] * x * c, a[0] * c])
            }
            MeanKind::Custom(_) => unreachable!(),
        })
    }

    /// Basis `u` with `m_α(x) = αᵀu(x)` for linear-in-parameter kinds.
    pub fn linear_basis(&self) -> Result<LinearBasis> {
        match &self.kind {
            MeanKind::Constant | MeanKind::Linear | MeanKind::Affine => {
                Ok(LinearBasis(self.kind.clone()))
            }
            MeanKind::Custom(f) if f.n_params() > 0 => Ok(LinearBasis(self.kind.clone())),
            other => Err(Error::NotLinearInParameters(other.name().to_string())),
        }
    }
}

/// Evaluates a mean and its Jacobian over a point set.
pub fn mean_eval(spec: &MeanSpec, xs: &Points) -> Result<MeanJacobian> {
    spec.validate()?;
    let n = xs.len();
    let p = spec.n_params();
    let mut values = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, p);
    for (i, x) in xs.iter().enumerate() {
        let (v, g) = spec.eval_point(x)?;
        if g.len() != p {
            return Err(Error::DimensionMismatch {
                context: "mean gradient",
                expected: p,
                got: g.len(),
            });
        }
        values[i] = v;
        for (j, gj) in g.into_iter().enumerate() {
            jac[(i, j)] = gj;
        }
    }
    Ok(MeanJacobian { values, jac })
}

/// Basis of a mean that is linear in its parameters.
#[derive(Debug, Clone)]
pub struct LinearBasis(MeanKind);

impl LinearBasis {
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if let MeanKind::Custom(f) = &self.0 {
            return f
                .basis(x)
                .ok_or_else(|| Error::NotLinearInParameters(f.name().to_string()));
        }
        if x.len() != 1 {
            return Err(Error::UnsupportedDimension(x.len()));
        }
        Ok(match self.0 {
            MeanKind::Constant => vec![1.0],
            MeanKind::Linear => vec![x[0]],
            MeanKind::Affine => vec![1.0, x[0]],
            _ => unreachable!("constructed only for linear kinds"),
        })
    }

    /// The `N × p` design matrix `U` with rows `u(x_i)ᵀ`.
    pub fn design(&self, xs: &Points) -> Result<DMatrix<f64>> {
        let rows = xs.iter().map(|x| self.eval(x)).collect::<Result<Vec<_>>>()?;
        let p = self.0.n_params();
        Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
    }
}

#[derive(Serialize, Deserialize)]
struct MeanSpecRepr {
    kind: String,
    #[serde(default)]
    alpha: Vec<f64>,
}

impl Serialize for MeanSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if let MeanKind::Custom(f) = &self.kind {
            return Err(serde::ser::Error::custom(format!(
                "custom mean `{}` cannot be serialized",
                f.name()
            )));
        }
        MeanSpecRepr {
            kind: self.kind.name().to_string(),
            alpha: self.alpha.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MeanSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = MeanSpecRepr::deserialize(d)?;
        let kind = MeanKind::from_name(&repr.kind).map_err(serde::de::Error::custom)?;
        // An empty alpha is allowed here; the model's theta fills it in.
        Ok(MeanSpec {
            kind,
            alpha: repr.alpha,
        })
    }
}
