//! Lower bounds on the prediction MSE.
//!
//! * BCRB: the predictive variance `σ²_{⋆|y}`, valid when `θ` is known.
//! * HCRB: `σ²_{⋆|y} + gᵀM⁻¹g` when `θ` is learned by an unbiased estimator,
//!   with `g = ∂/∂α (m⋆ − mᵀρ)` and `M = Jᵀ Σ_y⁻¹ J`, `J = ∂m/∂αᵀ`.
//!
//! Since `ρ` does not depend on `α`, `g = ∇_α m(x⋆) − Jᵀρ` exactly and no
//! numerical differentiation is involved. The covariance parameters enter the
//! HCRB only through `Σ_y`: the Fisher information is block diagonal between
//! `α` and `(β, σ²)` and the cross block with `f⋆` vanishes outside `α`.
//!
//! The bound assumes an unbiased hyperparameter estimator (more precisely, an
//! estimator whose bias with respect to the oracle predictor does not depend on
//! `θ`). Maximum likelihood satisfies this only asymptotically.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gp::{joint_moments, Dataset, GpModel, PosteriorFactor};
use crate::kernel::gram;
use crate::linalg::cholesky;
use crate::points::Points;

/// Largest accepted condition number of `M` before it is declared singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct HcrbIngredients {
    pub g: DVector<f64>,
    pub mmat: DMatrix<f64>,
    pub gap: f64,
    pub bcrb: f64,
    pub hcrb: f64,
}

/// One line of a bound report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub x: f64,
    pub fhat: f64,
    pub bcrb: f64,
    pub hcrb: f64,
    pub gap: f64,
}

/// `M` together with a solver for `M w = g`.
struct MeanInformation {
    mmat: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl MeanInformation {
    fn new(mmat: DMatrix<f64>) -> Result<Self> {
        let mmat = symmetrize(mmat);
        guard_condition(&mmat)?;
        let chol = nalgebra::Cholesky::new(mmat.clone()).ok_or(Error::SingularM {
            condition: f64::INFINITY,
        })?;
        Ok(MeanInformation { mmat, chol })
    }

    fn quad_inv(&self, g: &DVector<f64>) -> f64 {
        g.dot(&self.chol.solve(g))
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn guard_condition(m: &DMatrix<f64>) -> Result<f64> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularM { condition });
    }
    Ok(condition)
}

/// `M = Jᵀ Σ_y⁻¹ J` from a posterior factor.
fn mean_information(post: &PosteriorFactor) -> Result<MeanInformation> {
    let j = &post.train_mean.jac;
    if j.ncols() == 0 {
        return Err(Error::ZeroParameterMean);
    }
    let sj = post.chol.solve_mat(j)?;
    MeanInformation::new(j.tr_mul(&sj))
}

fn g_vector(post: &PosteriorFactor, t: usize) -> DVector<f64> {
    let grad_star = post.test_mean.jac.row(t).transpose();
    grad_star - post.train_mean.jac.tr_mul(&post.rho.column(t))
}

/// HCRB ingredients at every test point.
pub fn hcrb(model: &GpModel, data: &Dataset, xstars: &Points) -> Result<Vec<HcrbIngredients>> {
    let post = PosteriorFactor::new(model, data, xstars)?;
    hcrb_from_posterior(&post)
}

pub fn hcrb_from_posterior(post: &PosteriorFactor) -> Result<Vec<HcrbIngredients>> {
    let info = mean_information(post)?;
    (0..post.n_test())
        .map(|t| {
            let g = g_vector(post, t);
            let bcrb = post.variance(t)?;
            let gap = info.quad_inv(&g).max(0.0);
            Ok(HcrbIngredients {
                g,
                mmat: info.mmat.clone(),
                gap,
                bcrb,
                hcrb: bcrb + gap,
            })
        })
        .collect()
}

/// Predictor and both bounds per test point. For a mean without parameters
/// the HCRB coincides with the BCRB and `gap = 0`.
pub fn bound_report(model: &GpModel, data: &Dataset, xstars: &Points) -> Result<Vec<BoundRow>> {
    let post = PosteriorFactor::new(model, data, xstars)?;
    let gaps: Vec<f64> = if model.mean.n_params() == 0 {
        vec![0.0; post.n_test()]
    } else {
        let info = mean_information(&post)?;
        (0..post.n_test())
            .map(|t| info.quad_inv(&g_vector(&post, t)).max(0.0))
            .collect()
    };
    (0..post.n_test())
        .map(|t| {
            let bcrb = post.variance(t)?;
            Ok(BoundRow {
                x: xstars.get(t)[0],
                fhat: post.fhat(t),
                bcrb,
                hcrb: bcrb + gaps[t],
                gap: gaps[t],
            })
        })
        .collect()
}

/// Blocks of the hybrid information matrix for `[f⋆; θ]` at one test point.
/// Parameters are in raw coordinates `[α; β; σ²]`.
#[derive(Debug, Clone)]
pub struct FisherBlocks {
    /// Fisher information of `θ` from `p(y | θ)`.
    pub f_theta: DMatrix<f64>,
    /// `[−g/σ²_{⋆|y}; 0; 0]`.
    pub f_cross: DVector<f64>,
    /// `1/σ²_{⋆|y}`.
    pub j_star: f64,
    /// Number of mean parameters `p`.
    pub n_mean: usize,
}

impl FisherBlocks {
    /// Inverse of the Schur complement of the `θθ` block in the hybrid
    /// information matrix of `[f⋆; θ]`.
    ///
    /// The `θθ` block of that matrix also carries the information about `θ`
    /// in `p(f⋆ | y, θ)`. Only its `α` part couples to `f⋆`, and there it is
    /// `ggᵀ/σ²_{⋆|y} = F_{θ,⋆}F_{θ,⋆}ᵀ/J⋆`, which is what gets added to `F_θ`.
    /// Requires `F_θ` to be invertible.
    pub fn hybrid_bound(&self) -> Result<f64> {
        let ftheta = symmetrize(
            &self.f_theta + &self.f_cross * self.f_cross.transpose() / self.j_star,
        );
        guard_condition(&ftheta)?;
        let lu = ftheta.lu();
        let w = lu.solve(&self.f_cross).ok_or(Error::SingularM {
            condition: f64::INFINITY,
        })?;
        Ok(1.0 / (self.j_star - self.f_cross.dot(&w)))
    }
}

/// Slepian-Bangs Fisher information of the training distribution together
/// with the `f⋆` blocks at `xstar`.
pub fn fisher_information(model: &GpModel, data: &Dataset, xstar: &[f64]) -> Result<FisherBlocks> {
    model.validate()?;
    let xs1 = Points::new(data.xs.dim(), xstar.to_vec())?;
    let g_all = gram(&model.kernel, &data.xs, &xs1, true)?;
    let post = PosteriorFactor::new(model, data, &xs1)?;
    let p = model.mean.n_params();
    let q = model.kernel.n_params();
    let dim = p + q + 1;

    let sigma_inv = post.chol.inverse();
    let mut f = DMatrix::zeros(dim, dim);

    // mean block: ∂μᵀ/∂α Σ⁻¹ ∂μ/∂α
    if p > 0 {
        let j = &post.train_mean.jac;
        let sj = post.chol.solve_mat(j)?;
        let block = symmetrize(j.tr_mul(&sj));
        f.view_mut((0, 0), (p, p)).copy_from(&block);
    }

    // covariance block: ½ tr(Σ⁻¹ ∂Σ/∂θ_i Σ⁻¹ ∂Σ/∂θ_j)
    let mut products: Vec<DMatrix<f64>> = g_all
        .dk
        .iter()
        .map(|d| &sigma_inv * d.as_matrix())
        .collect();
    products.push(sigma_inv.clone()); // ∂Σ/∂σ² = I
    debug_assert_eq!(products.len(), q + 1);
    for a in 0..=q {
        for b in a..=q {
            let v = 0.5 * products[a].component_mul(&products[b].transpose()).sum();
            f[(p + a, p + b)] = v;
            f[(p + b, p + a)] = v;
        }
    }

    let var = post.variance(0)?;
    if var <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            n: data.len() + 1,
            max_jitter: 0.0,
        });
    }
    let g = g_vector(&post, 0);
    let mut cross = DVector::zeros(dim);
    for i in 0..p {
        cross[i] = -g[i] / var;
    }
    Ok(FisherBlocks {
        f_theta: f,
        f_cross: cross,
        j_star: 1.0 / var,
        n_mean: p,
    })
}

/// Mean-parameter information of the joint `[y; f⋆]` and `σ²_{⋆|y}`, `g`.
struct JointMeanInformation {
    a: DMatrix<f64>,
    g: DVector<f64>,
    var: f64,
    mmat: DMatrix<f64>,
}

fn joint_mean_information(model: &GpModel, data: &Dataset, xstar: &[f64]) -> Result<JointMeanInformation> {
    if model.mean.n_params() == 0 {
        return Err(Error::ZeroParameterMean);
    }
    let xs1 = Points::new(data.xs.dim(), xstar.to_vec())?;
    let post = PosteriorFactor::new(model, data, &xs1)?;
    let var = post.variance(0)?;
    if var <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            n: data.len() + 1,
            max_jitter: 0.0,
        });
    }
    let jm = joint_moments(model, data, xstar)?;
    let n = data.len();
    let p = model.mean.n_params();
    let mut d = DMatrix::zeros(n + 1, p);
    d.view_mut((0, 0), (n, p)).copy_from(&post.train_mean.jac);
    d.row_mut(n).copy_from(&post.test_mean.jac.row(0));
    let bar = cholesky(&jm.sigma_bar)?;
    let a = symmetrize(d.tr_mul(&bar.solve_mat(&d)?));
    let sj = post.chol.solve_mat(&post.train_mean.jac)?;
    let mmat = symmetrize(post.train_mean.jac.tr_mul(&sj));
    Ok(JointMeanInformation {
        a,
        g: g_vector(&post, 0),
        var,
        mmat,
    })
}

/// Residual of `∂μ̄ᵀ/∂α Σ̄⁻¹ ∂μ̄/∂α − ggᵀ/σ²_{⋆|y} = M`, left side built from
/// the joint moments and an `(N+1) × (N+1)` solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResidual {
    /// Max-norm of the difference.
    pub abs: f64,
    /// `abs / (1 + ‖M‖_max)`.
    pub rel: f64,
}

pub fn check_joint_information_identity(model: &GpModel, data: &Dataset, xstar: &[f64]) -> Result<IdentityResidual> {
    let info = joint_mean_information(model, data, xstar)?;
    let lhs = &info.a - (&info.g * info.g.transpose()) / info.var;
    let abs = (lhs - &info.mmat).abs().max();
    let scale = 1.0 + info.mmat.abs().max();
    Ok(IdentityResidual { abs, rel: abs / scale })
}

/// HCRB through the hybrid-information form before the matrix inversion
/// lemma is applied: `(σ⁻² − σ⁻⁴ gᵀ A⁻¹ g)⁻¹` with `A` the mean block of the
/// joint information. Serves as a cross-check on [`hcrb`].
pub fn hcrb_hybrid_form(model: &GpModel, data: &Dataset, xstar: &[f64]) -> Result<f64> {
    let info = joint_mean_information(model, data, xstar)?;
    let a = MeanInformation::new(info.a)?;
    let s = info.var;
    let inner = 1.0 / s - a.quad_inv(&info.g) / (s * s);
    if !(inner > 0.0) {
        return Err(Error::SingularM {
            condition: f64::INFINITY,
        });
    }
    Ok(1.0 / inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::mean::MeanSpec;

    /// N = 1, constant mean, k₁₁ = 4, σ² = 4 and a decorrelated test point.
    fn decorrelated() -> (GpModel, Dataset, Points) {
        let model = GpModel::new(MeanSpec::constant(20.0), KernelSpec::se(2.0, 0.01), 4.0).unwrap();
        let data = Dataset::new(Points::scalars(vec![0.0]), vec![26.0]).unwrap();
        (model, data, Points::scalars(vec![100.0]))
    }

    #[test]
    fn n1_hcrb() {
        let (model, data, xs) = decorrelated();
        let h = &hcrb(&model, &data, &xs).unwrap()[0];
        assert_eq!(h.g.as_slice(), &[1.0]);
        assert!((h.mmat[(0, 0)] - 0.125).abs() < 1e-15);
        assert!((h.gap - 8.0).abs() < 1e-12);
        assert!((h.bcrb - 4.0).abs() < 1e-15);
        assert!((h.hcrb - 12.0).abs() < 1e-12);
        assert!((hcrb_hybrid_form(&model, &data, &[100.0]).unwrap() - 12.0).abs() < 1e-10);
        let r = check_joint_information_identity(&model, &data, &[100.0]).unwrap();
        assert!(r.abs <= 1e-10);
    }

    #[test]
    fn n1_fisher() {
        let (model, data, _) = decorrelated();
        let fb = fisher_information(&model, &data, &[100.0]).unwrap();
        assert!((fb.f_theta[(0, 0)] - 0.125).abs() < 1e-15);
        // σ² entry: ½ (1/8)²
        assert!((fb.f_theta[(3, 3)] - 0.5 / 64.0).abs() < 1e-15);
        for j in 1..4 {
            assert_eq!(fb.f_theta[(0, j)], 0.0);
            assert_eq!(fb.f_theta[(j, 0)], 0.0);
        }
        assert_eq!(fb.f_cross[0], -0.25);
        assert_eq!(&fb.f_cross.as_slice()[1..], &[0.0, 0.0, 0.0]);
        assert!((fb.j_star - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_parameter_mean_is_rejected() {
        let model = GpModel::new(MeanSpec::zero(), KernelSpec::se(1.0, 1.0), 1.0).unwrap();
        let data = Dataset::new(Points::scalars(vec![0.0, 1.0]), vec![0.0, 1.0]).unwrap();
        let xs = Points::scalars(vec![0.5]);
        assert!(matches!(hcrb(&model, &data, &xs), Err(Error::ZeroParameterMean)));
        let rows = bound_report(&model, &data, &xs).unwrap();
        assert_eq!(rows[0].hcrb, rows[0].bcrb);
        assert_eq!(rows[0].gap, 0.0);
    }

    #[test]
    fn unidentifiable_mean_is_singular() {
        // linear mean observed only at x = 0 carries no information on α
        let model = GpModel::new(MeanSpec::linear(1.0), KernelSpec::se(1.0, 1.0), 1.0).unwrap();
        let data = Dataset::new(Points::scalars(vec![0.0, 0.0]), vec![0.0, 1.0]).unwrap();
        let err = hcrb(&model, &data, &Points::scalars(vec![1.0])).unwrap_err();
        assert!(matches!(err, Error::SingularM { .. }));
    }

    #[test]
    fn constant_mean_symmetric_design() {
        let model = GpModel::new(MeanSpec::constant(0.0), KernelSpec::se(1.0, 1.0), 0.5).unwrap();
        let data = Dataset::new(Points::scalars(vec![-1.0, 1.0]), vec![0.3, -0.2]).unwrap();
        let x = 0.3;
        // hand evaluation: Σ_y, ρ and σ²_{⋆|y} for two points
        let k = |a: f64, b: f64| (-(a - b) * (a - b) / 2.0).exp();
        let (s11, s12) = (1.0 + 0.5, k(-1.0, 1.0));
        let det = s11 * s11 - s12 * s12;
        let inv = [[s11 / det, -s12 / det], [-s12 / det, s11 / det]];
        let ks = [k(x, -1.0), k(x, 1.0)];
        let rho = [
            inv[0][0] * ks[0] + inv[0][1] * ks[1],
            inv[1][0] * ks[0] + inv[1][1] * ks[1],
        ];
        let var = 1.0 - (ks[0] * rho[0] + ks[1] * rho[1]);
        let one_inv_one = inv[0][0] + inv[0][1] + inv[1][0] + inv[1][1];
        let expected = var + (1.0 - rho[0] - rho[1]).powi(2) / one_inv_one;

        let h = &hcrb(&model, &data, &Points::scalars(vec![x])).unwrap()[0];
        assert!((h.hcrb - expected).abs() < 1e-12);
        assert!((hcrb_hybrid_form(&model, &data, &[x]).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn hybrid_information_reproduces_hcrb() {
        let model = GpModel::new(MeanSpec::affine(1.0, 0.5), KernelSpec::se(1.3, 0.9), 0.4).unwrap();
        let data = Dataset::new(
            Points::scalars(vec![-2.0, -0.7, 0.1, 0.9, 2.2, 3.0]),
            vec![0.1, 0.5, 1.2, 1.0, 2.4, 2.2],
        )
        .unwrap();
        let x = 4.1;
        let fb = fisher_information(&model, &data, &[x]).unwrap();
        let h = &hcrb(&model, &data, &Points::scalars(vec![x])).unwrap()[0];
        let via_him = fb.hybrid_bound().unwrap();
        assert!((via_him - h.hcrb).abs() <= 1e-8 * (1.0 + h.hcrb));
        assert!((fb.f_theta.view((0, 0), (2, 2)) - &h.mmat).abs().max() <= 1e-10 * (1.0 + h.mmat.abs().max()));
    }
}
