mod common;

use common::{random_inputs, repo_root, rng};
use gp_hcrb::bounds::{bound_report, hcrb};
use gp_hcrb::experiments::{run_marginalized_comparison, run_mc, McExperimentConfig, TestGrid, Variant};
use gp_hcrb::gp::{predict, Dataset, GpModel};
use gp_hcrb::kernel::KernelSpec;
use gp_hcrb::learning::FitConfig;
use gp_hcrb::mean::MeanSpec;
use gp_hcrb::points::Points;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

/// Zero mean with `k + β₁ + β₂xx′`: the affine mean integrated out under
/// `α ~ N(0, diag(β))`.
fn marginalized(original: &GpModel, beta_aff: (f64, f64)) -> GpModel {
    let kernel = KernelSpec::sum(vec![original.kernel.clone(), KernelSpec::affine(beta_aff.0, beta_aff.1)]);
    GpModel::new(MeanSpec::zero(), kernel, original.sigma2).unwrap()
}

proptest! {
    #![proptest_config(common::proptest_config(40))]

    /// For finite prior variances the marginalized predictive variance is
    /// `σ²_{⋆|y} + gᵀ(diag(β)⁻¹ + M)⁻¹g`; the HCRB is its limit `β → ∞`.
    #[test]
    fn marginalized_variance_closed_form(seed in any::<u64>(), b1 in 0.01f64..100.0, b2 in 0.01f64..100.0) {
        let mut r = rng(seed);
        let original = GpModel::new(
            MeanSpec::affine(1.0, 0.5),
            KernelSpec::se(r.random_range(0.5..2.0), r.random_range(0.4..2.0)),
            r.random_range(0.1..1.0),
        ).unwrap();
        let n = r.random_range(3..10);
        let xs = random_inputs(&mut r, n);
        let data = Dataset::new(Points::scalars(xs), vec![0.0; n]).unwrap();
        let xstar = r.random_range(-6.0..6.0);
        let h = &hcrb(&original, &data, &Points::scalars(vec![xstar])).unwrap()[0];
        let prior_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0 / b1, 1.0 / b2]));
        let w = (prior_inv + &h.mmat).lu().solve(&h.g).unwrap();
        let expected = h.bcrb + h.g.dot(&w);
        let marg = predict(&marginalized(&original, (b1, b2)), &data, &Points::scalars(vec![xstar])).unwrap()[0].var;
        prop_assert!((marg - expected).abs() <= 1e-8 * expected, "{marg} vs {expected}");
        prop_assert!(marg <= h.hcrb * (1.0 + 1e-12));
    }
}

#[test]
fn marginalized_variance_tends_to_hcrb() {
    let original = GpModel::new(MeanSpec::affine(1.0, 0.5), KernelSpec::se(2.0, 0.8), 4.0).unwrap();
    let xs: Vec<f64> = (0..25).map(|i| -5.0 + i as f64 * 10.0 / 24.0).collect();
    let data = Dataset::new(Points::scalars(xs), vec![0.0; 25]).unwrap();
    let grid = Points::linspace(-8.0, 8.0, 17);
    let h = bound_report(&original, &data, &grid).unwrap();
    let mut prev = f64::INFINITY;
    for scale in [1e2, 1e4, 1e6] {
        let m = predict(&marginalized(&original, (scale, scale)), &data, &grid).unwrap();
        let worst = m
            .iter()
            .zip(&h)
            .map(|(p, r)| (p.var - r.hcrb).abs() / r.hcrb)
            .fold(0.0, f64::max);
        assert!(worst < prev);
        prev = worst;
    }
    assert!(prev < 1e-4, "{prev}");
}

fn affine_cfg(n_mc: usize, fixed: bool) -> McExperimentConfig {
    let text = std::fs::read_to_string(repo_root().join("configs/marginalized_fixed.json")).unwrap();
    let mut cfg = McExperimentConfig::from_json_str(&text).unwrap();
    cfg.n_mc = n_mc;
    if !fixed {
        if let Variant::MarginalizedModel { original_mask, marginal_mask, .. } = &mut cfg.variant {
            *original_mask = None;
            *marginal_mask = None;
        }
    }
    cfg
}

#[test]
fn marginalized_comparison_shapes() {
    for fixed in [true, false] {
        let cmp = run_marginalized_comparison(&affine_cfg(3, fixed)).unwrap();
        assert_eq!(cmp.original.rows.len(), 17);
        assert_eq!(cmp.marginalized.rows.len(), 17);
        for (o, m) in cmp.original.rows.iter().zip(&cmp.marginalized.rows) {
            for v in [o.empirical_mse, o.hcrb_fit_mean, m.empirical_mse, m.bcrb_fit_mean] {
                assert!(v.is_finite());
            }
            assert_eq!(m.bcrb_fit_mean, m.hcrb_fit_mean);
        }
    }
}

#[test]
fn fixed_subset_keeps_original_model_at_truth() {
    let cfg = affine_cfg(2, true);
    let cmp = run_marginalized_comparison(&cfg).unwrap();
    // every original parameter is frozen, so its bounds never move
    for r in &cmp.original.rows {
        assert_eq!(r.hcrb_fit_mean, r.hcrb_truth);
    }
    let theta = &cmp.marginalized.fit_stats.theta_hat_mean;
    assert_eq!(&theta[..2], &[2.0, 0.8]);
    assert_eq!(theta[4], 4.0);
}

#[test]
fn mc_is_deterministic_per_seed() {
    let text = std::fs::read_to_string(repo_root().join("configs/linear_mean.json")).unwrap();
    let mut cfg = McExperimentConfig::from_json_str(&text).unwrap();
    cfg.n_mc = 20;
    let a = run_mc(&cfg).unwrap();
    let b = run_mc(&cfg).unwrap();
    assert_eq!(a, b);
    cfg.seed += 1;
    assert_ne!(run_mc(&cfg).unwrap().rows, a.rows);
}

#[test]
fn every_config_orders_bounds() {
    let dir = repo_root().join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let Ok(cfg) = McExperimentConfig::from_json_str(&text) else {
            continue;
        };
        seen += 1;
        let train = cfg.train_points().unwrap();
        let data = Dataset::new(train.clone(), vec![0.0; train.len()]).unwrap();
        let grid = cfg.test_xs.points().unwrap();
        for row in bound_report(&cfg.truth, &data, &grid).unwrap() {
            assert!(row.hcrb >= row.bcrb, "{path:?}: {row:?}");
        }
    }
    assert!(seen >= 5);
}

#[test]
fn zero_parameter_mean_reports_equal_bounds() {
    let cfg = McExperimentConfig {
        truth: GpModel::new(MeanSpec::zero(), KernelSpec::se(1.0, 1.0), 0.2).unwrap(),
        train_xs: Some(vec![-1.0, 0.0, 1.0]),
        design: None,
        test_xs: TestGrid::Points(vec![-2.0, 0.5, 2.0]),
        n_mc: 2,
        fit: FitConfig { n_starts: 1, ..FitConfig::default() },
        init: None,
        variant: Variant::FullLearn,
        seed: 1,
    };
    let c = run_mc(&cfg).unwrap();
    for r in &c.rows {
        assert_eq!(r.bcrb_truth, r.hcrb_truth);
    }
}
