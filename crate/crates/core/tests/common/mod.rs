//! Random instances and independent oracles shared by the integration tests.
#![allow(dead_code)]

use gp_hcrb::gp::{Dataset, GpModel};
use gp_hcrb::kernel::KernelSpec;
use gp_hcrb::mean::MeanSpec;
use gp_hcrb::points::Points;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..Default::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mean(rng: &mut ChaCha8Rng, kinds: &[&str]) -> MeanSpec {
    match kinds[rng.random_range(0..kinds.len())] {
        "zero" => MeanSpec::zero(),
        "constant" => MeanSpec::constant(rng.random_range(-3.0..3.0)),
        "linear" => MeanSpec::linear(rng.random_range(-2.0..2.0)),
        "affine" => MeanSpec::affine(rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)),
        "sinusoid" => MeanSpec::sinusoid(
            rng.random_range(0.5..3.0),
            rng.random_range(0.3..2.0),
            rng.random_range(-1.5..1.5),
        ),
        k => panic!("unknown mean kind {k}"),
    }
}

fn random_leaf(rng: &mut ChaCha8Rng, allow_affine: bool) -> KernelSpec {
    let n = if allow_affine { 4 } else { 3 };
    match rng.random_range(0..n) {
        0 => KernelSpec::se(rng.random_range(0.5..2.0), rng.random_range(0.4..2.5)),
        1 => KernelSpec::periodic(
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..2.0),
            rng.random_range(1.0..4.0),
            rng.random_range(1.0..6.0),
        ),
        2 => KernelSpec::rq(
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..3.0),
        ),
        _ => KernelSpec::affine(rng.random_range(0.1..1.0), rng.random_range(0.05..0.5)),
    }
}

/// Any kernel kind, including sums of two leaves.
pub fn random_kernel(rng: &mut ChaCha8Rng) -> KernelSpec {
    if rng.random_bool(0.25) {
        KernelSpec::sum(vec![random_leaf(rng, false), random_leaf(rng, true)])
    } else {
        random_leaf(rng, true)
    }
}

/// Distinct sorted inputs in `[-3, 3]` with spacing at least 0.15.
pub fn random_inputs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut xs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        xs.sort_by(f64::total_cmp);
        if xs.windows(2).all(|w| w[1] - w[0] > 0.15) {
            return xs;
        }
    }
}

pub struct Instance {
    pub model: GpModel,
    pub data: Dataset,
    pub xstar: f64,
}

/// A model, a dataset drawn around its mean and one test point.
pub fn random_instance(seed: u64, mean_kinds: &[&str], n_range: (usize, usize)) -> Instance {
    let mut r = rng(seed);
    let mean = random_mean(&mut r, mean_kinds);
    let kernel = random_kernel(&mut r);
    let sigma2 = r.random_range(0.1..1.0);
    let model = GpModel::new(mean, kernel, sigma2).unwrap();
    // M has rank at most N, so a p-parameter mean needs N ≥ p.
    let lo = n_range.0.max(model.mean.n_params());
    let n = r.random_range(lo..=n_range.1.max(lo));
    let xs = random_inputs(&mut r, n);
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| model.mean.eval_point(&[*x]).unwrap().0 + r.random_range(-2.0..2.0))
        .collect();
    let xstar = r.random_range(-5.0..5.0);
    Instance {
        model,
        data: Dataset::new(Points::scalars(xs), ys).unwrap(),
        xstar,
    }
}

/// Kernel value computed straight from the closed forms, independent of the
/// library's kernel code.
pub fn kernel_ref(spec: &KernelSpec, x: f64, x2: f64) -> f64 {
    let b = spec.params();
    let r = (x - x2).abs();
    let json = serde_json::to_value(spec).unwrap();
    match json["kind"].as_str().unwrap() {
        "se" => b[0] * b[0] * (-r * r / (2.0 * b[1] * b[1])).exp(),
        "periodic" => {
            let s = (std::f64::consts::PI * r / b[2]).sin();
            b[0] * b[0] * (-2.0 * s * s / (b[1] * b[1]) - r * r / (b[3] * b[3])).exp()
        }
        "rq" => b[0] * b[0] * (1.0 + r * r / (2.0 * b[1] * b[2] * b[2])).powf(-b[2]),
        "affine" => b[0] + b[1] * x * x2,
        "sum" => spec.children.iter().map(|c| kernel_ref(c, x, x2)).sum(),
        k => panic!("unknown kernel {k}"),
    }
}

/// Basis `u(x)` of a mean that is linear in its parameters.
pub fn basis_ref(mean: &MeanSpec, x: f64) -> Vec<f64> {
    let json = serde_json::to_value(mean).unwrap();
    match json["kind"].as_str().unwrap() {
        "constant" => vec![1.0],
        "linear" => vec![x],
        "affine" => vec![1.0, x],
        k => panic!("{k} is not linear in its parameters"),
    }
}

/// Universal-kriging mean squared error from the saddle-point system
/// `[[Σ, U], [Uᵀ, 0]] [λ; μ] = [k⋆; u⋆]`, `MSE = k⋆⋆ − λᵀk⋆ − μᵀu⋆`.
/// Uses a dense LU on the bordered matrix and nothing from the library but
/// the model's parameter values.
pub fn universal_kriging_mse(model: &GpModel, xs: &[f64], xstar: f64) -> f64 {
    let n = xs.len();
    let p = basis_ref(&model.mean, 0.0).len();
    let mut a = DMatrix::zeros(n + p, n + p);
    let mut rhs = DVector::zeros(n + p);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = kernel_ref(&model.kernel, xs[i], xs[j]);
        }
        a[(i, i)] += model.sigma2;
        for (k, u) in basis_ref(&model.mean, xs[i]).into_iter().enumerate() {
            a[(i, n + k)] = u;
            a[(n + k, i)] = u;
        }
        rhs[i] = kernel_ref(&model.kernel, xstar, xs[i]);
    }
    for (k, u) in basis_ref(&model.mean, xstar).into_iter().enumerate() {
        rhs[n + k] = u;
    }
    let sol = a.lu().solve(&rhs).expect("saddle system is non-singular");
    kernel_ref(&model.kernel, xstar, xstar) - sol.dot(&rhs)
}

/// Central difference of a scalar function along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_inf(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let s = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    d / s.max(floor)
}

pub fn repo_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}
