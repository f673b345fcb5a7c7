mod common;

use std::sync::Arc;

use common::median;
use dualsmc::synthetic::scalar_ar;
use dualsmc::baselines::bayesian::{BayesianConfig, BayesianEstimator};
use dualsmc::baselines::rml::{spsa_gradient, RmlConfig, RmlEstimator};
use dualsmc::param_filter::{KernelCovariance, StepSize};
use dualsmc::{simulate, DMatrix, DVector, Dims, Estimator, FnDynamics, ModelSpec, ParamDomain, Prior};

/// `y = θ₁ x + θ₂`, so the log-likelihood is quadratic in θ and two-sided
/// SPSA averaged over all sign patterns recovers the gradient exactly.
#[test]
fn spsa_is_unbiased_for_quadratic_likelihood() {
    let r = 0.3;
    let model = ModelSpec::new(
        Dims { n_x: 1, n_theta: 2, n_y: 1 },
        Arc::new(FnDynamics {
            transition: |_: usize, x: &DVector<f64>, _: &DVector<f64>, w: &DVector<f64>| x + w,
            output: |_: usize, x: &DVector<f64>, th: &DVector<f64>| DVector::from_element(1, th[0] * x[0] + th[1]),
        }),
        DMatrix::from_element(1, 1, 0.1),
        DMatrix::from_element(1, 1, r),
        ParamDomain::uniform(2, -5.0, 5.0).unwrap(),
    )
    .unwrap();
    let x = vec![DVector::from_element(1, 2.0)];
    let w = vec![DVector::zeros(1)];
    let theta = DVector::from_vec(vec![0.7, -0.4]);
    let y = DVector::from_element(1, 1.9);
    let resid = y[0] - (theta[0] * 2.0 + theta[1]);
    let exact = [resid * 2.0 / r, resid / r];
    let mut mean = DVector::zeros(2);
    for d in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
        mean += spsa_gradient(&model, 0, &x, &w, &theta, &DVector::from_vec(d.to_vec()), 0.05, &y).unwrap() / 4.0;
    }
    for k in 0..2 {
        assert!((mean[k] - exact[k]).abs() < 1e-9 * exact[k].abs().max(1.0), "{k}: {} vs {}", mean[k], exact[k]);
    }
}

#[test]
fn rml_with_zero_gain_keeps_theta() {
    let model = scalar_ar(0.1, 0.01, 0.5, 1.2).unwrap();
    let truth = simulate(&model, &DVector::from_element(1, 5.0), &vec![DVector::from_element(1, 0.8); 200], 200, 1).unwrap();
    let cfg = RmlConfig {
        n_particles: 40,
        step_size: StepSize::Constant { gamma: 0.0 },
        ..Default::default()
    };
    let mut est = RmlEstimator::new(model, &Prior::diagonal(&[5.0], &[0.1]), &DVector::from_element(1, 1.0), cfg, 3).unwrap();
    let rows = est.run(&truth.outputs).unwrap().rows;
    assert!(rows.iter().all(|r| r.theta_hat[0] == 1.0));
}

#[test]
fn kernel_smoothing_recovers_constant_parameter() {
    let model = scalar_ar(0.1, 0.01, 0.5, 1.2).unwrap();
    let star = 0.8;
    let mut errs = Vec::new();
    for seed in 0..25 {
        let truth = simulate(&model, &DVector::from_element(1, 5.0), &vec![DVector::from_element(1, star); 1000], 1000, seed).unwrap();
        let cfg = BayesianConfig {
            n_particles: 1000,
            evolution_var: vec![0.01],
            kernel_cov: KernelCovariance::Running,
            ..Default::default()
        };
        let mut est = BayesianEstimator::new(model.clone(), &Prior::diagonal(&[5.0], &[0.1]), &Prior::diagonal(&[1.0], &[0.01]), cfg, seed).unwrap();
        let rows = est.run(&truth.outputs).unwrap().rows;
        errs.push((rows.last().unwrap().theta_hat[0] - star).abs() / star);
    }
    let m = median(errs);
    assert!(m < 0.05, "median relative error {m}");
}
