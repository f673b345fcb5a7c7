use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dualsmc::baselines::bayesian::{BayesianConfig, BayesianEstimator};
use dualsmc::baselines::rml::{RmlConfig, RmlEstimator};
use dualsmc::gas_turbine::{self, EngineConstants, EngineNoise, FaultScenario};
use dualsmc::rng::stream;
use dualsmc::smc::{self, RegularizationConfig, Whitening};
use dualsmc::{simulate, DVector, DualConfig, DualEstimator, Estimator, ParticleEnsemble, Prior, StateFilterConfig};
use rand::Rng;

const STEPS: usize = 100;

fn engine_data() -> (dualsmc::ModelSpec, DVector<f64>, Vec<DVector<f64>>) {
    let c = EngineConstants::default();
    let x0 = c.nominal.to_vector();
    let model = gas_turbine::model(c, None, &EngineNoise::default()).unwrap();
    let thetas = FaultScenario::healthy().theta_trajectory(STEPS, gas_turbine::DT);
    let truth = simulate(&model, &x0, &thetas, STEPS, 0).unwrap();
    (model, x0, truth.outputs)
}

fn estimators(c: &mut Criterion) {
    let (model, x0, ys) = engine_data();
    let x_prior = Prior::diagonal(x0.as_slice(), &[1.0; 4]);
    let th_prior = Prior::diagonal(&[1.0; 4], &[1e-4; 4]);
    let mut g = c.benchmark_group("engine_100_steps");
    g.sample_size(10);
    for n in [50usize, 200] {
        g.bench_with_input(BenchmarkId::new("dual", n), &n, |b, &n| {
            let mut cfg = DualConfig::default();
            cfg.state = StateFilterConfig {
                n_particles: n,
                ..Default::default()
            };
            cfg.param.n_particles = n;
            cfg.param.evolution_var = vec![1e-4; 4];
            b.iter(|| {
                let mut e = DualEstimator::new(model.clone(), &x_prior, &th_prior, cfg.clone(), 1).unwrap();
                black_box(e.run(&ys).unwrap())
            })
        });
        g.bench_with_input(BenchmarkId::new("bayesian", n), &n, |b, &n| {
            let cfg = BayesianConfig {
                n_particles: n,
                evolution_var: vec![1e-4; 4],
                ..Default::default()
            };
            b.iter(|| {
                let mut e = BayesianEstimator::new(model.clone(), &x_prior, &th_prior, cfg.clone(), 1).unwrap();
                black_box(e.run(&ys).unwrap())
            })
        });
        g.bench_with_input(BenchmarkId::new("rml", n), &n, |b, &n| {
            let cfg = RmlConfig {
                n_particles: n,
                ..Default::default()
            };
            b.iter(|| {
                let mut e = RmlEstimator::new(model.clone(), &x_prior, &DVector::from_element(4, 1.0), cfg.clone(), 1).unwrap();
                black_box(e.run(&ys).unwrap())
            })
        });
    }
    g.finish();
}

fn primitives(c: &mut Criterion) {
    let n = 1000;
    let mut rng = stream(0, 0);
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let w = smc::normalize_weights(&raw).unwrap();
    c.bench_function("resample_bootstrap_1000", |b| b.iter(|| black_box(smc::resample_bootstrap(&w, n, &mut rng))));
    c.bench_function("resample_residual_1000", |b| b.iter(|| black_box(smc::resample_residual(&w, n, &mut rng))));
    let particles: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(4, |_, _| rng.random::<f64>())).collect();
    let ens = ParticleEnsemble::new(particles, w.clone()).unwrap();
    let white = Whitening::identity(4);
    let cfg = RegularizationConfig::default();
    c.bench_function("regularize_1000x4", |b| b.iter(|| black_box(smc::regularize(&ens, &white, &cfg, &mut rng).unwrap())));
}

criterion_group!(benches, estimators, primitives);
criterion_main!(benches);
