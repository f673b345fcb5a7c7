//! Recursive maximum likelihood with simultaneous-perturbation gradients.
//!
//! Each step perturbs the current estimate along a Rademacher direction,
//! propagates the particles under both perturbed parameters with shared
//! noise, and differences the two log mean likelihoods. The state particles
//! are then propagated at the updated estimate and resampled.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dual::{EstimateRow, Estimator, Prior};
use crate::error::{Error, FilterRole, Result};
use crate::linalg::{self, CovNorm};
use crate::model::ModelSpec;
use crate::param_filter::StepSize;
use crate::rng::{self, streams, SmcRng};
use crate::smc::{self, ParticleEnsemble, RegularizationConfig, Whitening};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmlConfig {
    pub n_particles: usize,
    pub step_size: StepSize,
    /// Perturbation magnitude `c_t`.
    pub perturbation: f64,
    /// Optional cap on the infinity norm of one parameter move.
    pub max_step: Option<f64>,
    pub regularization: RegularizationConfig,
}

impl Default for RmlConfig {
    fn default() -> Self {
        Self {
            n_particles: 150,
            step_size: StepSize::Constant { gamma: 0.05 },
            perturbation: 0.01,
            max_step: None,
            regularization: RegularizationConfig::default(),
        }
    }
}

impl RmlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::Config("RML filter needs at least 2 particles".into()));
        }
        if !(self.perturbation > 0.0) {
            return Err(Error::Config("SPSA perturbation must be positive".into()));
        }
        if matches!(self.max_step, Some(m) if !(m > 0.0)) {
            return Err(Error::Config("max_step must be positive".into()));
        }
        if self.step_size.at(1) < 0.0 {
            return Err(Error::Config("step size must be nonnegative".into()));
        }
        self.regularization.validate()
    }
}

/// `log (1/N) Σ p(y | h(f(x_i, θ, ω_i), θ))`.
pub fn log_mean_likelihood(
    model: &ModelSpec,
    t: usize,
    states: &[DVector<f64>],
    noises: &[DVector<f64>],
    theta: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    let mut log_a = Vec::with_capacity(states.len());
    for (x, w) in states.iter().zip(noises) {
        let x_new = model.transition(t, x, theta, w);
        log_a.push(model.log_likelihood(y, &model.output(t + 1, &x_new, theta))?);
    }
    let max = log_a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = log_a.iter().map(|l| (l - max).exp()).sum();
    Ok(max + (sum / states.len() as f64).ln())
}

/// Two-sided SPSA estimate of `∇ log p(y_t | y_{1:t-1}, θ)`.
#[allow(clippy::too_many_arguments)]
pub fn spsa_gradient(
    model: &ModelSpec,
    t: usize,
    states: &[DVector<f64>],
    noises: &[DVector<f64>],
    theta: &DVector<f64>,
    delta: &DVector<f64>,
    c: f64,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let j_plus = log_mean_likelihood(model, t, states, noises, &(theta + delta * c), y)?;
    if !j_plus.is_finite() {
        return Err(Error::GradientUndefined { branch: "plus" });
    }
    let j_minus = log_mean_likelihood(model, t, states, noises, &(theta - delta * c), y)?;
    if !j_minus.is_finite() {
        return Err(Error::GradientUndefined { branch: "minus" });
    }
    Ok(delta.map(|d| (j_plus - j_minus) / (2.0 * c * d)))
}

pub fn rademacher<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

pub struct RmlEstimator {
    model: ModelSpec,
    config: RmlConfig,
    particles: Vec<DVector<f64>>,
    theta_hat: DVector<f64>,
    rng: SmcRng,
    t: usize,
    history: Vec<EstimateRow>,
    skipped_gradients: usize,
}

impl RmlEstimator {
    pub fn new(model: ModelSpec, x0: &Prior, theta0: &DVector<f64>, config: RmlConfig, seed: u64) -> Result<Self> {
        model.require_filterable()?;
        config.validate()?;
        let dims = model.dims();
        if x0.mean.len() != dims.n_x || theta0.len() != dims.n_theta {
            return Err(Error::Dimension {
                what: "initial distribution",
                expected: dims.n_x + dims.n_theta,
                got: x0.mean.len() + theta0.len(),
            });
        }
        if !model.param_domain().contains(theta0) {
            return Err(Error::OutsideDomain(format!("initial parameter {:?}", theta0.as_slice())));
        }
        let mut init = rng::stream(seed, streams::INIT);
        let particles = smc::sample_gaussian(&x0.cov, config.n_particles, &mut init)?
            .into_iter()
            .map(|d| &x0.mean + d)
            .collect();
        Ok(Self {
            model,
            config,
            particles,
            theta_hat: theta0.clone(),
            rng: rng::stream(seed, streams::BASELINE),
            t: 0,
            history: Vec::new(),
            skipped_gradients: 0,
        })
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    /// Steps whose gradient was skipped because a likelihood sum vanished.
    pub fn skipped_gradients(&self) -> usize {
        self.skipped_gradients
    }
}

impl Estimator for RmlEstimator {
    fn name(&self) -> &'static str {
        "rml"
    }

    fn step(&mut self, y: &DVector<f64>) -> Result<EstimateRow> {
        let dims = self.model.dims();
        if y.len() != dims.n_y {
            return Err(Error::Dimension {
                what: "observation",
                expected: dims.n_y,
                got: y.len(),
            });
        }
        let domain = self.model.param_domain().clone();
        let t = self.t + 1;
        let noises: Vec<DVector<f64>> = (0..self.particles.len())
            .map(|_| self.model.sample_process_noise(&mut self.rng))
            .collect();
        let delta = rademacher(dims.n_theta, &mut self.rng);
        let gamma = self.config.step_size.at(t);
        match spsa_gradient(&self.model, self.t, &self.particles, &noises, &self.theta_hat, &delta, self.config.perturbation, y) {
            Ok(g) => {
                let mut step = g * gamma;
                if let Some(cap) = self.config.max_step {
                    let m = step.amax();
                    if m > cap {
                        step *= cap / m;
                    }
                }
                if step.iter().all(|v| v.is_finite()) {
                    self.theta_hat = domain.clamp(&(&self.theta_hat + step));
                }
            }
            Err(e @ Error::GradientUndefined { .. }) => {
                log::debug!("rml t={t}: {e}; parameter step skipped");
                self.skipped_gradients += 1;
            }
            Err(e) => return Err(e),
        }

        let mut predicted = Vec::with_capacity(self.particles.len());
        let mut log_w = Vec::with_capacity(self.particles.len());
        for (i, (x, w)) in self.particles.iter().zip(&noises).enumerate() {
            let x_new = self.model.transition(self.t, x, &self.theta_hat, w);
            if x_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::FilterDivergence { particle: i });
            }
            log_w.push(self.model.log_likelihood(y, &self.model.output(t, &x_new, &self.theta_hat))?);
            predicted.push(x_new);
        }
        let weights = smc::normalize_log_weights(&log_w).map_err(|e| match e {
            Error::DegenerateWeights => Error::FilterDegenerate {
                role: FilterRole::Rml,
                step: t,
            },
            other => other,
        })?;
        let ess = smc::effective_sample_size(&weights);
        let whitening = Whitening::from_covariance(&linalg::covariance(&predicted, CovNorm::Sample))?;
        let ensemble = ParticleEnsemble::new(predicted, weights)?;
        self.particles = smc::regularize(&ensemble, &whitening, &self.config.regularization, &mut self.rng)?.particles;
        self.t = t;
        let x_hat = linalg::mean(&self.particles);
        let row = EstimateRow {
            t,
            y_hat: self.model.output(t, &x_hat, &self.theta_hat),
            x_hat,
            theta_hat: self.theta_hat.clone(),
            ess_state: ess,
            ess_param: ess,
            domain_violations: usize::from(!domain.contains(&self.theta_hat)),
            particles_checked: 1,
        };
        self.history.push(row.clone());
        Ok(row)
    }

    fn history(&self) -> &[EstimateRow] {
        &self.history
    }
}
