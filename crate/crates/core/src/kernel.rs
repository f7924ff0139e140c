//! Covariance kernels `k_β(x, x')`, Gram assembly and analytic `∂K/∂β`.
//!
//! Parameterizations (with `r = ‖x − x'‖`):
//!
//! ```text
//! se        β₁² exp(−r² / (2β₂²))
//! periodic  β₁² exp(−(2/β₂²) sin²(πr/β₃) − r²/β₄²)
//! rq        β₁² (1 + r² / (2β₂β₃²))^(−β₃)
//! affine    β₁ + β₂ ⟨x, x'⟩
//! sum       Σ children, parameters concatenated in child order
//! ```
//!
//! The periodic kernel decays with `r` (a locally periodic kernel), so it is
//! bounded and positive semidefinite. In `rq`, `β₃` is the shape exponent and
//! `β₂β₃²` plays the role of `α ℓ²` in the usual `(1 + r²/(2αℓ²))^(−α)` form.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::points::Points;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Se,
    Periodic,
    Rq,
    Affine,
    Sum,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Se => "se",
            KernelKind::Periodic => "periodic",
            KernelKind::Rq => "rq",
            KernelKind::Affine => "affine",
            KernelKind::Sum => "sum",
        }
    }

    fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "se" => KernelKind::Se,
            "periodic" => KernelKind::Periodic,
            "rq" => KernelKind::Rq,
            "affine" => KernelKind::Affine,
            "sum" => KernelKind::Sum,
            other => {
                return Err(Error::ConfigInvalid(format!(
                    "unknown kernel kind `{other}`"
                )))
            }
        })
    }

    /// Parameter count of a leaf kernel (`None` for sums).
    fn leaf_arity(self) -> Option<usize> {
        match self {
            KernelKind::Se | KernelKind::Affine => Some(2),
            KernelKind::Periodic => Some(4),
            KernelKind::Rq => Some(3),
            KernelKind::Sum => None,
        }
    }
}

/// Sign constraint on a covariance parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Positive,
    NonNegative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Leaf parameters. Empty for `sum`; its parameters live in `children`.
    pub beta: Vec<f64>,
    pub children: Vec<KernelSpec>,
}

/// Gram matrix, test cross-covariances and optional parameter derivatives.
#[derive(Debug, Clone)]
pub struct GramBundle {
    /// `K = {k(x_i, x_j)}` over the training points.
    pub kmat: SymMatrix,
    /// Column `t` is `k⋆` for test point `t` (`N × T`).
    pub kstar: DMatrix<f64>,
    /// `k⋆⋆` per test point.
    pub kss: Vec<f64>,
    /// `∂K/∂β_i` for every covariance parameter, empty unless requested.
    pub dk: Vec<SymMatrix>,
}

impl KernelSpec {
    fn leaf(kind: KernelKind, beta: Vec<f64>) -> Self {
        KernelSpec {
            kind,
            beta,
            children: vec![],
        }
    }

    pub fn se(variance_sqrt: f64, length: f64) -> Self {
        Self::leaf(KernelKind::Se, vec![variance_sqrt, length])
    }

    pub fn periodic(b1: f64, b2: f64, period: f64, decay: f64) -> Self {
        Self::leaf(KernelKind::Periodic, vec![b1, b2, period, decay])
    }

    pub fn rq(b1: f64, b2: f64, b3: f64) -> Self {
        Self::leaf(KernelKind::Rq, vec![b1, b2, b3])
    }

    pub fn affine(offset: f64, slope: f64) -> Self {
        Self::leaf(KernelKind::Affine, vec![offset, slope])
    }

    pub fn sum(children: Vec<KernelSpec>) -> Self {
        KernelSpec {
            kind: KernelKind::Sum,
            beta: vec![],
            children,
        }
    }

    pub fn n_params(&self) -> usize {
        match self.kind.leaf_arity() {
            Some(n) => n,
            None => self.children.iter().map(KernelSpec::n_params).sum(),
        }
    }

    /// All covariance parameters, concatenated in child order for sums.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut Vec<f64>) {
        if self.kind == KernelKind::Sum {
            for c in &self.children {
                c.collect_params(out);
            }
        } else {
            out.extend_from_slice(&self.beta);
        }
    }

    pub fn constraints(&self) -> Vec<Constraint> {
        let mut out = Vec::with_capacity(self.n_params());
        self.collect_constraints(&mut out);
        out
    }

    fn collect_constraints(&self, out: &mut Vec<Constraint>) {
        match self.kind {
            KernelKind::Sum => self.children.iter().for_each(|c| c.collect_constraints(out)),
            KernelKind::Affine => out.extend([Constraint::NonNegative; 2]),
            k => out.extend(std::iter::repeat_n(
                Constraint::Positive,
                k.leaf_arity().unwrap_or(0),
            )),
        }
    }

    /// Same structure with parameters replaced; validates the result.
    pub fn with_params(&self, params: &[f64]) -> Result<KernelSpec> {
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "kernel parameters",
                expected: self.n_params(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        let out = self.rebuild(params, &mut offset);
        out.validate()?;
        Ok(out)
    }

    fn rebuild(&self, params: &[f64], offset: &mut usize) -> KernelSpec {
        if self.kind == KernelKind::Sum {
            KernelSpec::sum(self.children.iter().map(|c| c.rebuild(params, offset)).collect())
        } else {
            let n = self.beta.len().max(self.kind.leaf_arity().unwrap_or(0));
            let beta = params[*offset..*offset + n].to_vec();
            *offset += n;
            KernelSpec::leaf(self.kind, beta)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind.name();
        match self.kind.leaf_arity() {
            None => {
                if self.children.is_empty() {
                    return Err(Error::InvalidBeta {
                        kind,
                        reason: "sum kernel has no children".into(),
                    });
                }
                self.children.iter().try_for_each(KernelSpec::validate)
            }
            Some(n) => {
                if self.beta.len() != n {
                    return Err(Error::InvalidBeta {
                        kind,
                        reason: format!("expected {n} parameters, got {}", self.beta.len()),
                    });
                }
                let nonneg = self.kind == KernelKind::Affine;
                for (i, &b) in self.beta.iter().enumerate() {
                    let ok = b.is_finite() && if nonneg { b >= 0.0 } else { b > 0.0 };
                    if !ok {
                        let need = if nonneg { ">= 0" } else { "> 0" };
                        return Err(Error::InvalidBeta {
                            kind,
                            reason: format!("beta[{i}] = {b} must be finite and {need}"),
                        });
                    }
                }
                Ok(())
            }
        }
    }

    /// Kernel value without validation; callers validate once up front.
    pub(crate) fn value(&self, x: &[f64], x2: &[f64]) -> f64 {
        let b = &self.beta;
        match self.kind {
            KernelKind::Sum => self.children.iter().map(|c| c.value(x, x2)).sum(),
            KernelKind::Affine => b[0] + b[1] * dot(x, x2),
            KernelKind::Se => {
                let r2 = dist2(x, x2);
                b[0] * b[0] * (-r2 / (2.0 * b[1] * b[1])).exp()
            }
            KernelKind::Periodic => {
                let r2 = dist2(x, x2);
                let s = (PI * r2.sqrt() / b[2]).sin();
                b[0] * b[0] * (-2.0 * s * s / (b[1] * b[1]) - r2 / (b[3] * b[3])).exp()
            }
            KernelKind::Rq => {
                let r2 = dist2(x, x2);
                let z = 1.0 + r2 / (2.0 * b[1] * b[2] * b[2]);
                b[0] * b[0] * z.powf(-b[2])
            }
        }
    }

    /// Writes `∂k/∂β` (raw parameters) into `out` and returns `k`.
    pub(crate) fn value_and_grad(&self, x: &[f64], x2: &[f64], out: &mut [f64]) -> f64 {
        let b = &self.beta;
        match self.kind {
            KernelKind::Sum => {
                let mut offset = 0;
                let mut total = 0.0;
                for c in &self.children {
                    let n = c.n_params();
                    total += c.value_and_grad(x, x2, &mut out[offset..offset + n]);
                    offset += n;
                }
                total
            }
            KernelKind::Affine => {
                let d = dot(x, x2);
                out[0] = 1.0;
                out[1] = d;
                b[0] + b[1] * d
            }
            KernelKind::Se => {
                let r2 = dist2(x, x2);
                let k = b[0] * b[0] * (-r2 / (2.0 * b[1] * b[1])).exp();
                out[0] = 2.0 * k / b[0];
                out[1] = k * r2 / (b[1] * b[1] * b[1]);
                k
            }
            KernelKind::Periodic => {
                let r2 = dist2(x, x2);
                let r = r2.sqrt();
                let (s, c) = (PI * r / b[2]).sin_cos();
                let k = b[0] * b[0] * (-2.0 * s * s / (b[1] * b[1]) - r2 / (b[3] * b[3])).exp();
                out[0] = 2.0 * k / b[0];
                out[1] = k * 4.0 * s * s / (b[1] * b[1] * b[1]);
                out[2] = k * 4.0 * PI * r * s * c / (b[1] * b[1] * b[2] * b[2]);
                out[3] = k * 2.0 * r2 / (b[3] * b[3] * b[3]);
                k
            }
            KernelKind::Rq => {
                let r2 = dist2(x, x2);
                let q = r2 / (2.0 * b[1] * b[2] * b[2]);
                let z = 1.0 + q;
                let k = b[0] * b[0] * z.powf(-b[2]);
                out[0] = 2.0 * k / b[0];
                out[1] = k * b[2] * q / (b[1] * z);
                out[2] = k * (2.0 * q / z - z.ln());
                k
            }
        }
    }
}

fn dist2(x: &[f64], x2: &[f64]) -> f64 {
    x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn dot(x: &[f64], x2: &[f64]) -> f64 {
    x.iter().zip(x2).map(|(a, b)| a * b).sum()
}

/// Validated single kernel evaluation.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    spec.validate()?;
    if x.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            context: "kernel inputs",
            expected: x.len(),
            got: x2.len(),
        });
    }
    Ok(spec.value(x, x2))
}

/// Assembles `K`, `k⋆`, `k⋆⋆` and, when asked, every `∂K/∂β_i`.
pub fn gram(
    spec: &KernelSpec,
    xs: &Points,
    xstars: &Points,
    with_derivatives: bool,
) -> Result<GramBundle> {
    spec.validate()?;
    let n = xs.len();
    if n == 0 {
        return Err(Error::InvalidData("no training points".into()));
    }
    if !xstars.is_empty() && xstars.dim() != xs.dim() {
        return Err(Error::DimensionMismatch {
            context: "test point dimension",
            expected: xs.dim(),
            got: xstars.dim(),
        });
    }
    let q = spec.n_params();
    let (kmat, dk) = if with_derivatives {
        let mut k = DMatrix::zeros(n, n);
        let mut d = vec![DMatrix::zeros(n, n); q];
        let mut g = vec![0.0; q];
        for i in 0..n {
            for j in i..n {
                let v = spec.value_and_grad(xs.get(i), xs.get(j), &mut g);
                k[(i, j)] = v;
                k[(j, i)] = v;
                for (m, gm) in d.iter_mut().zip(&g) {
                    m[(i, j)] = *gm;
                    m[(j, i)] = *gm;
                }
            }
        }
        let dk = d.into_iter().map(SymMatrix::new).collect::<Result<Vec<_>>>()?;
        (SymMatrix::new(k)?, dk)
    } else {
        (
            SymMatrix::from_upper(n, |i, j| spec.value(xs.get(i), xs.get(j))),
            vec![],
        )
    };
    let t = xstars.len();
    let kstar = DMatrix::from_fn(n, t, |i, s| spec.value(xs.get(i), xstars.get(s)));
    let kss = xstars.iter().map(|x| spec.value(x, x)).collect();
    Ok(GramBundle {
        kmat,
        kstar,
        kss,
        dk,
    })
}

#[derive(Serialize, Deserialize)]
struct KernelSpecRepr {
    kind: String,
    #[serde(default)]
    beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<KernelSpecRepr>,
}

impl KernelSpecRepr {
    fn from_spec(spec: &KernelSpec) -> Self {
        KernelSpecRepr {
            kind: spec.kind.name().to_string(),
            beta: spec.params(),
            children: spec.children.iter().map(KernelSpecRepr::from_spec).collect(),
        }
    }

    fn into_spec(self) -> Result<KernelSpec> {
        let kind = KernelKind::from_name(&self.kind)?;
        if kind == KernelKind::Sum {
            let children = self
                .children
                .into_iter()
                .map(KernelSpecRepr::into_spec)
                .collect::<Result<Vec<_>>>()?;
            let sum = KernelSpec::sum(children);
            if self.beta.is_empty() {
                Ok(sum)
            } else if self.beta.len() == sum.n_params() {
                Ok(sum.rebuild(&self.beta, &mut 0))
            } else {
                Err(Error::ConfigInvalid(format!(
                    "sum kernel has {} parameters, beta lists {}",
                    sum.n_params(),
                    self.beta.len()
                )))
            }
        } else {
            if !self.children.is_empty() {
                return Err(Error::ConfigInvalid(format!(
                    "`{}` kernel cannot have children",
                    kind.name()
                )));
            }
            Ok(KernelSpec::leaf(kind, self.beta))
        }
    }
}

impl Serialize for KernelSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KernelSpecRepr::from_spec(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for KernelSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        KernelSpecRepr::deserialize(d)?
            .into_spec()
            .map_err(serde::de::Error::custom)
    }
}
