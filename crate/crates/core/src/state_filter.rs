//! Regularized bootstrap particle filter for `p(x_t | y_{1:t}, θ̂_{t-1|t-1})`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FilterRole, Result};
use crate::linalg::{self, CovNorm};
use crate::model::ModelSpec;
use crate::smc::{self, ParticleEnsemble, RegularizationConfig, Whitening};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateFilterConfig {
    pub n_particles: usize,
    pub regularization: RegularizationConfig,
    /// Also compute `∂x̂_{t|t-1}/∂θ` each step (used by the predictive
    /// parameter likelihood).
    pub sensitivity: bool,
    /// Central-difference step for the sensitivity.
    pub sensitivity_step: f64,
}

impl Default for StateFilterConfig {
    fn default() -> Self {
        Self {
            n_particles: 50,
            regularization: RegularizationConfig::default(),
            sensitivity: false,
            sensitivity_step: 1e-4,
        }
    }
}

impl StateFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::Config("state filter needs at least 2 particles".into()));
        }
        if !(self.sensitivity_step > 0.0) {
            return Err(Error::Config("sensitivity step must be positive".into()));
        }
        self.regularization.validate()
    }
}

/// Output of the prediction stage.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// `x̂^(i)_{t|t-1}`.
    pub particles: Vec<DVector<f64>>,
    /// `ŷ^(i)_{t|t-1}`.
    pub outputs: Vec<DVector<f64>>,
    pub mean: DVector<f64>,
    /// `Σ_{x̂_{t|t-1}}`, sample convention.
    pub cov: DMatrix<f64>,
}

/// What one filter step exposes to the rest of the estimator.
#[derive(Debug, Clone)]
pub struct StateStep {
    pub t: usize,
    /// `x̂_{t|t}`.
    pub estimate: DVector<f64>,
    /// `x̂_{t|t-1}` (prior mean).
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
    /// `∂x̂_{t|t-1}/∂θ` at the parameter used for the prediction.
    pub sensitivity: Option<DMatrix<f64>>,
    /// Parameter the prediction was made with (`θ̂_{t-1|t-1}`).
    pub theta_used: DVector<f64>,
    /// `h(x̂_{t|t}, θ̂_{t-1|t-1})`.
    pub output: DVector<f64>,
    /// Effective sample size of the likelihood weights before resampling.
    pub ess: f64,
    pub passthrough_dims: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StateFilter {
    config: StateFilterConfig,
    particles: Vec<DVector<f64>>,
    estimate: DVector<f64>,
    prior_cov: DMatrix<f64>,
    t: usize,
}

impl StateFilter {
    pub fn new(config: StateFilterConfig, particles: Vec<DVector<f64>>) -> Result<Self> {
        config.validate()?;
        if particles.len() != config.n_particles {
            return Err(Error::Dimension {
                what: "state particle count",
                expected: config.n_particles,
                got: particles.len(),
            });
        }
        let ensemble = ParticleEnsemble::uniform(particles)?;
        let estimate = ensemble.mean();
        let prior_cov = linalg::covariance(ensemble.particles(), CovNorm::Sample);
        Ok(Self {
            config,
            particles: ensemble.into_particles(),
            estimate,
            prior_cov,
            t: 0,
        })
    }

    /// Initial particles drawn from `N(mean, cov)`.
    pub fn from_gaussian<R: Rng + ?Sized>(
        config: StateFilterConfig,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let draws = smc::sample_gaussian(cov, config.n_particles, rng)?;
        Self::new(config, draws.into_iter().map(|d| mean + d).collect())
    }

    pub fn config(&self) -> &StateFilterConfig {
        &self.config
    }

    pub fn particles(&self) -> &[DVector<f64>] {
        &self.particles
    }

    pub fn estimate(&self) -> &DVector<f64> {
        &self.estimate
    }

    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }

    pub fn time(&self) -> usize {
        self.t
    }

    /// Propagate every particle through the transition with fresh process
    /// noise and evaluate the predicted outputs.
    pub fn predict<R: Rng + ?Sized>(&self, theta_hat: &DVector<f64>, model: &ModelSpec, rng: &mut R) -> Result<Prediction> {
        let t = self.t;
        let mut particles = Vec::with_capacity(self.particles.len());
        for (i, x) in self.particles.iter().enumerate() {
            let w = model.sample_process_noise(rng);
            let next = model.transition(t, x, theta_hat, &w);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::FilterDivergence { particle: i });
            }
            particles.push(next);
        }
        let outputs = particles.iter().map(|x| model.output(t + 1, x, theta_hat)).collect();
        let mean = linalg::mean(&particles);
        let cov = linalg::covariance(&particles, CovNorm::Sample);
        Ok(Prediction {
            particles,
            outputs,
            mean,
            cov,
        })
    }

    /// `∂x̂_{t|t-1}/∂θ` by central differences of the noise-free transition
    /// at the previous posterior mean.
    pub fn sensitivity(&self, theta_hat: &DVector<f64>, model: &ModelSpec) -> DMatrix<f64> {
        let n_x = self.estimate.len();
        let n_theta = theta_hat.len();
        let zero = DVector::zeros(n_x);
        let eta = self.config.sensitivity_step;
        let mut s = DMatrix::zeros(n_x, n_theta);
        for k in 0..n_theta {
            let mut plus = theta_hat.clone();
            let mut minus = theta_hat.clone();
            plus[k] += eta;
            minus[k] -= eta;
            let d = (model.transition(self.t, &self.estimate, &plus, &zero)
                - model.transition(self.t, &self.estimate, &minus, &zero))
                / (2.0 * eta);
            s.set_column(k, &d);
        }
        s
    }

    /// Predict, weight, regularize and resample. Consumes `y_{t+1}` where `t`
    /// is the number of observations processed so far.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        theta_hat: &DVector<f64>,
        y: &DVector<f64>,
        model: &ModelSpec,
        rng: &mut R,
    ) -> Result<StateStep> {
        let dims = model.dims();
        if y.len() != dims.n_y {
            return Err(Error::Dimension {
                what: "observation",
                expected: dims.n_y,
                got: y.len(),
            });
        }
        let sensitivity = self.config.sensitivity.then(|| self.sensitivity(theta_hat, model));
        let prediction = self.predict(theta_hat, model, rng)?;
        let t = self.t + 1;
        let weights = update(&prediction.outputs, y, model).map_err(|e| match e {
            Error::DegenerateWeights => Error::FilterDegenerate {
                role: FilterRole::State,
                step: t,
            },
            other => other,
        })?;
        let ess = smc::effective_sample_size(&weights);
        let whitening = Whitening::from_covariance(&prediction.cov)?;
        let ensemble = ParticleEnsemble::new(prediction.particles, weights)?;
        let reg = smc::regularize(&ensemble, &whitening, &self.config.regularization, rng)?;
        if !reg.passthrough_dims.is_empty() {
            log::debug!("state filter t={t}: no spread in whitened dims {:?}", reg.passthrough_dims);
        }
        self.particles = reg.particles;
        self.estimate = linalg::mean(&self.particles);
        self.prior_cov = prediction.cov;
        self.t = t;
        let output = model.output(t, &self.estimate, theta_hat);
        Ok(StateStep {
            t,
            estimate: self.estimate.clone(),
            prior_mean: prediction.mean,
            prior_cov: self.prior_cov.clone(),
            sensitivity,
            theta_used: theta_hat.clone(),
            output,
            ess,
            passthrough_dims: reg.passthrough_dims,
        })
    }
}

/// Normalized likelihood weights `w^(i) ∝ N(y - ŷ^(i); 0, V)`.
pub fn update(outputs: &[DVector<f64>], y: &DVector<f64>, model: &ModelSpec) -> Result<Vec<f64>> {
    let density = model.measurement_density()?;
    let log_w: Vec<f64> = outputs.iter().map(|yh| density.log_density(&(y - yh))).collect();
    smc::normalize_log_weights(&log_w)
}
