//! Augmented-state Bayesian filter with Liu–West kernel smoothing of the
//! parameters and regularized resampling of the joint vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dual::{EstimateRow, Estimator, Prior};
use crate::error::{Error, FilterRole, Result};
use crate::linalg::{self, CovNorm};
use crate::model::ModelSpec;
use crate::param_filter::{shrink, KernelCovariance};
use crate::rng::{self, streams, SmcRng};
use crate::smc::{self, ParticleEnsemble, RegularizationConfig, Whitening};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BayesianConfig {
    pub n_particles: usize,
    pub shrinkage: f64,
    /// Diagonal of the kernel covariance used with [`KernelCovariance::Initial`]
    /// and as a floor otherwise.
    pub evolution_var: Vec<f64>,
    pub kernel_cov: KernelCovariance,
    pub regularization: RegularizationConfig,
    pub cov_floor: f64,
}

impl Default for BayesianConfig {
    fn default() -> Self {
        Self {
            n_particles: 45,
            shrinkage: 0.93,
            evolution_var: Vec::new(),
            kernel_cov: KernelCovariance::Running,
            regularization: RegularizationConfig::default(),
            cov_floor: 1e-12,
        }
    }
}

impl BayesianConfig {
    pub fn validate(&self, n_theta: usize) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::Config("augmented filter needs at least 2 particles".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::Config(format!("shrinkage {} outside (0, 1]", self.shrinkage)));
        }
        if self.evolution_var.len() != n_theta || self.evolution_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config(format!("evolution variance needs {n_theta} nonnegative entries")));
        }
        self.regularization.validate()
    }
}

/// Joint particles `[x; θ]`.
pub struct BayesianEstimator {
    model: ModelSpec,
    config: BayesianConfig,
    particles: Vec<DVector<f64>>,
    rng: SmcRng,
    t: usize,
    history: Vec<EstimateRow>,
}

impl BayesianEstimator {
    pub fn new(model: ModelSpec, x0: &Prior, theta0: &Prior, config: BayesianConfig, seed: u64) -> Result<Self> {
        model.require_filterable()?;
        let dims = model.dims();
        config.validate(dims.n_theta)?;
        if x0.mean.len() != dims.n_x || theta0.mean.len() != dims.n_theta {
            return Err(Error::Dimension {
                what: "initial distribution",
                expected: dims.n_x + dims.n_theta,
                got: x0.mean.len() + theta0.mean.len(),
            });
        }
        let domain = model.param_domain();
        if !domain.contains(&theta0.mean) {
            return Err(Error::OutsideDomain(format!("initial parameter mean {:?}", theta0.mean.as_slice())));
        }
        let mut init = rng::stream(seed, streams::INIT);
        let th = smc::sample_gaussian(&theta0.cov, config.n_particles, &mut init)?;
        let xs = smc::sample_gaussian(&x0.cov, config.n_particles, &mut init)?;
        let particles = xs
            .into_iter()
            .zip(th)
            .map(|(dx, dth)| join(&(&x0.mean + dx), &domain.clamp(&(&theta0.mean + dth))))
            .collect();
        Ok(Self {
            model,
            config,
            particles,
            rng: rng::stream(seed, streams::BASELINE),
            t: 0,
            history: Vec::new(),
        })
    }

    pub fn particles(&self) -> &[DVector<f64>] {
        &self.particles
    }

    pub fn theta_particles(&self) -> Vec<DVector<f64>> {
        let n_x = self.model.dims().n_x;
        self.particles.iter().map(|p| split(p, n_x).1).collect()
    }

    fn kernel_cov(&self, thetas: &[DVector<f64>]) -> DMatrix<f64> {
        let mut v = match self.config.kernel_cov {
            KernelCovariance::Running => linalg::covariance(thetas, CovNorm::Sample),
            KernelCovariance::Initial => DMatrix::from_diagonal(&DVector::from_vec(self.config.evolution_var.clone())),
        };
        for i in 0..v.nrows() {
            v[(i, i)] = v[(i, i)].max(self.config.cov_floor);
        }
        v
    }
}

fn join(x: &DVector<f64>, th: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + th.len(), x.iter().chain(th.iter()).copied())
}

fn split(p: &DVector<f64>, n_x: usize) -> (DVector<f64>, DVector<f64>) {
    (p.rows(0, n_x).into_owned(), p.rows(n_x, p.len() - n_x).into_owned())
}

impl Estimator for BayesianEstimator {
    fn name(&self) -> &'static str {
        "bayesian"
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
        let a = self.config.shrinkage;
        let (xs, thetas): (Vec<_>, Vec<_>) = self.particles.iter().map(|p| split(p, dims.n_x)).unzip();
        let theta_bar = linalg::mean(&thetas);
        let factor = linalg::psd_sqrt(&(self.kernel_cov(&thetas) * (1.0 - a * a)))?;

        let mut predicted = Vec::with_capacity(self.particles.len());
        let mut log_w = Vec::with_capacity(self.particles.len());
        for (x, th) in xs.iter().zip(&thetas) {
            let m = shrink(th, &theta_bar, a);
            let proposed = &m + smc::gaussian_with_factor(&factor, &mut self.rng);
            let th_new = domain.pull_inside(&m, &proposed);
            let w = self.model.sample_process_noise(&mut self.rng);
            let x_new = self.model.transition(self.t, x, &th_new, &w);
            if x_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::FilterDivergence { particle: predicted.len() });
            }
            log_w.push(self.model.log_likelihood(y, &self.model.output(self.t + 1, &x_new, &th_new))?);
            predicted.push(join(&x_new, &th_new));
        }
        let t = self.t + 1;
        let weights = smc::normalize_log_weights(&log_w).map_err(|e| match e {
            Error::DegenerateWeights => Error::FilterDegenerate {
                role: FilterRole::Augmented,
                step: t,
            },
            other => other,
        })?;
        let ess = smc::effective_sample_size(&weights);
        let whitening = Whitening::from_covariance(&linalg::covariance(&predicted, CovNorm::Sample))?;
        let ensemble = ParticleEnsemble::new(predicted, weights)?;
        let n = ensemble.len();
        let reg = smc::regularize(&ensemble, &whitening, &self.config.regularization, &mut self.rng)?;
        // The kernel step above already keeps the parameter spread; undo the
        // extra h² inflation the regularization adds to the parameter block.
        let h = self.config.regularization.bandwidth_for(n, dims.n_x + dims.n_theta);
        let c = 1.0 / (1.0 + h * h).sqrt();
        let reg_theta: Vec<DVector<f64>> = reg.particles.iter().map(|p| split(p, dims.n_x).1).collect();
        let reg_bar = linalg::mean(&reg_theta);
        // kernel jitter may leave the box; clamp the parameter block
        self.particles = reg
            .particles
            .into_iter()
            .map(|p| {
                let (x, th) = split(&p, dims.n_x);
                let th = shrink(&th, &reg_bar, c);
                join(&x, &domain.clamp(&th))
            })
            .collect();
        self.t = t;
        let mean = linalg::mean(&self.particles);
        let (x_hat, theta_hat) = split(&mean, dims.n_x);
        let violations = self.theta_particles().iter().filter(|p| !domain.contains(p)).count();
        let row = EstimateRow {
            t,
            y_hat: self.model.output(t, &x_hat, &theta_hat),
            x_hat,
            theta_hat,
            ess_state: ess,
            ess_param: ess,
            domain_violations: violations,
            particles_checked: self.particles.len(),
        };
        self.history.push(row.clone());
        Ok(row)
    }

    fn history(&self) -> &[EstimateRow] {
        &self.history
    }
}
