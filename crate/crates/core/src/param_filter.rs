//! Prediction-error driven kernel-smoothing particle filter for the
//! time-varying parameter vector.
//!
//! Each step moves every particle along `γ_t R_t ψ_t ε_t`, projects the move
//! back into the admissible box, shrinks towards the previous ensemble mean,
//! adds kernel noise with covariance `(I - A²) V`, reweights by the output
//! likelihood and resamples with the residual scheme.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FilterRole, Result};
use crate::linalg::{self, CovNorm, GaussianDensity};
use crate::model::{ModelSpec, ParamDomain};
use crate::smc;
use crate::state_filter::StateStep;

/// Maximum number of `μ`-scalings tried by [`project_step`].
pub const MAX_PROJECTIONS: usize = 64;

/// Step-size schedule `γ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSize {
    Constant { gamma: f64 },
    /// `γ_t = floor + (initial - floor) / (1 + t / horizon)`.
    Decaying { initial: f64, floor: f64, horizon: f64 },
}

impl StepSize {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSize::Constant { gamma } => gamma,
            StepSize::Decaying { initial, floor, horizon } => floor + (initial - floor) / (1.0 + t as f64 / horizon),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSize::Constant { gamma } => gamma >= 0.0 && gamma.is_finite(),
            StepSize::Decaying { initial, floor, horizon } => floor > 0.0 && initial >= floor && horizon > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step size schedule {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Use the model's analytic Jacobian, falling back to differences.
    Analytic,
    FiniteDifference,
}

/// Which covariance the kernel noise `ζ` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelCovariance {
    /// Posterior covariance of the previous step.
    #[default]
    Running,
    /// The configured `evolution_cov`, held fixed.
    Initial,
}

/// How the model output for a candidate parameter is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// `h(x̂_{t|t}, θ)`: the state estimate already conditioned on `y_t`.
    Filtered,
    /// `h(x̂_{t|t-1} + S_t (θ - θ̂_{t-1|t-1}), θ)` with likelihood covariance
    /// `H Σ_{t|t-1} Hᵀ + V`. Parameters that only act through the transition
    /// are visible to the likelihood in this mode.
    #[default]
    Predictive,
}

/// Per-output scale applied to `ε` and `ψ` in the gradient term.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "scale", rename_all = "snake_case")]
pub enum OutputScaling {
    #[default]
    Raw,
    /// Divide each output by its measurement noise standard deviation.
    NoiseWhitened,
    /// Divide each output by the given nominal magnitude.
    Nominal(Vec<f64>),
}

impl OutputScaling {
    fn factors(&self, model: &ModelSpec) -> Result<Option<DVector<f64>>> {
        let n_y = model.dims().n_y;
        match self {
            OutputScaling::Raw => Ok(None),
            OutputScaling::NoiseWhitened => {
                let v = model.measurement_noise_cov();
                Ok(Some(DVector::from_iterator(n_y, (0..n_y).map(|i| 1.0 / v[(i, i)].sqrt()))))
            }
            OutputScaling::Nominal(s) => {
                if s.len() != n_y || s.iter().any(|v| !(v.abs() > 0.0)) {
                    return Err(Error::Config("nominal output scales must be nonzero, one per output".into()));
                }
                Ok(Some(DVector::from_iterator(n_y, s.iter().map(|v| 1.0 / v.abs()))))
            }
        }
    }
}

/// `P_max = γ₀ sqrt(trace(E_max E_maxᵀ))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmaxConfig {
    pub gamma0: f64,
    /// Rows of `E_max`; only its Frobenius norm enters the bound.
    pub e_max: Vec<Vec<f64>>,
}

impl PmaxConfig {
    pub fn pmax(&self) -> f64 {
        let fro2: f64 = self.e_max.iter().flatten().map(|v| v * v).sum();
        self.gamma0 * fro2.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamFilterConfig {
    pub n_particles: usize,
    /// `a` in `A = aI`.
    pub shrinkage: f64,
    pub step_size: StepSize,
    /// `μ`.
    pub projection_factor: f64,
    /// `V_θ̂` as a diagonal of variances.
    pub evolution_var: Vec<f64>,
    pub kernel_cov: KernelCovariance,
    /// Smoothing window for the reported criterion `J̄`.
    pub pe_window: usize,
    pub jacobian: JacobianMode,
    /// Central-difference step `η`.
    pub fd_step: f64,
    pub pmax: Option<PmaxConfig>,
    pub prediction: PredictionMode,
    pub scaling: OutputScaling,
    /// Floor on the kernel covariance diagonal.
    pub cov_floor: f64,
}

impl Default for ParamFilterConfig {
    fn default() -> Self {
        Self {
            n_particles: 50,
            shrinkage: 0.93,
            step_size: StepSize::Constant { gamma: 0.9 },
            projection_factor: 0.5,
            evolution_var: Vec::new(),
            kernel_cov: KernelCovariance::Running,
            pe_window: 20,
            jacobian: JacobianMode::Analytic,
            fd_step: 1e-5,
            pmax: None,
            prediction: PredictionMode::Predictive,
            scaling: OutputScaling::Raw,
            cov_floor: 1e-12,
        }
    }
}

impl ParamFilterConfig {
    pub fn validate(&self, n_theta: usize) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::Config("parameter filter needs at least 2 particles".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::Config(format!("shrinkage {} outside (0, 1]", self.shrinkage)));
        }
        if !(0.0..=1.0).contains(&self.projection_factor) {
            return Err(Error::Config(format!("projection factor {} outside [0, 1]", self.projection_factor)));
        }
        if self.evolution_var.len() != n_theta || self.evolution_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(format!(
                "evolution variance needs {n_theta} positive entries, got {:?}",
                self.evolution_var
            )));
        }
        if self.pe_window == 0 {
            return Err(Error::Config("pe_window must be at least 1".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config("finite-difference step must be positive".into()));
        }
        self.step_size.validate()
    }

    pub fn evolution_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.evolution_var.clone()))
    }
}

/// `ε = y - h(x̂, θ)`.
pub fn prediction_error(theta: &DVector<f64>, x_hat: &DVector<f64>, y: &DVector<f64>, t: usize, model: &ModelSpec) -> DVector<f64> {
    y - model.output(t, x_hat, theta)
}

/// `R = ‖ε - mean(ε)‖`. Identically zero for scalar outputs.
pub fn updating_gain(eps: &DVector<f64>) -> f64 {
    let m = eps.mean();
    eps.iter().map(|e| (e - m).powi(2)).sum::<f64>().sqrt()
}

/// `∂g/∂θ` (`n_out × n_θ`) by central differences, one-sided at the domain
/// boundary.
pub fn finite_difference<G>(theta: &DVector<f64>, domain: &ParamDomain, eta: f64, g: G) -> DMatrix<f64>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let base = g(theta);
    let mut jac = DMatrix::zeros(base.len(), theta.len());
    for k in 0..theta.len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[k] += eta;
        minus[k] -= eta;
        let col = if plus[k] > domain.upper[k] {
            (&base - g(&minus)) / eta
        } else if minus[k] < domain.lower[k] {
            (g(&plus) - &base) / eta
        } else {
            (g(&plus) - g(&minus)) / (2.0 * eta)
        };
        jac.set_column(k, &col);
    }
    jac
}

/// `ψ = (∂h/∂θ)ᵀ` at `(x̂, θ)`, shape `n_θ × n_y`.
pub fn output_jacobian(x_hat: &DVector<f64>, theta: &DVector<f64>, t: usize, model: &ModelSpec, mode: JacobianMode, eta: f64) -> DMatrix<f64> {
    if mode == JacobianMode::Analytic {
        if let Some(j) = model.output_jacobian(t, x_hat, theta) {
            return j.transpose();
        }
    }
    finite_difference(theta, model.param_domain(), eta, |th| model.output(t, x_hat, th)).transpose()
}

/// Result of [`project_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub point: DVector<f64>,
    pub scalings: usize,
    /// No admissible scaled step was found; `point` is the start point.
    pub gave_up: bool,
}

/// Scale `step` by `μ` until `theta + step` lies in the domain.
pub fn project_step(theta: &DVector<f64>, step: &DVector<f64>, domain: &ParamDomain, mu: f64) -> Projected {
    let mut step = step.clone();
    for scalings in 0..=MAX_PROJECTIONS {
        let candidate = theta + &step;
        if domain.contains(&candidate) {
            return Projected {
                point: candidate,
                scalings,
                gave_up: false,
            };
        }
        if mu >= 1.0 {
            break;
        }
        step *= mu;
    }
    Projected {
        point: theta.clone(),
        scalings: MAX_PROJECTIONS,
        gave_up: true,
    }
}

/// `a m + (1 - a) m̄`.
pub fn shrink(m: &DVector<f64>, m_bar: &DVector<f64>, a: f64) -> DVector<f64> {
    m * a + m_bar * (1.0 - a)
}

/// Upper bound on the shrinkage factor,
/// `a_max = 1 - sqrt(σ_min(M) / σ_max(M))`, `M = P²_max Ψ V_y Ψᵀ V_θ⁻¹`.
/// Returns the bound and whether it is degenerate (scalar parameter).
pub fn shrinkage_upper_bound(pmax: f64, psi: &DMatrix<f64>, vy: &DMatrix<f64>, vtheta: &DMatrix<f64>) -> Result<(f64, bool)> {
    let vinv = vtheta
        .clone()
        .try_inverse()
        .ok_or(Error::Covariance { min_eigenvalue: 0.0 })?;
    let m = psi * vy * psi.transpose() * vinv * (pmax * pmax);
    bound_from_matrix(&m)
}

pub(crate) fn bound_from_matrix(m: &DMatrix<f64>) -> Result<(f64, bool)> {
    let sv = m.singular_values();
    let max = sv.max();
    if !(max > 0.0) {
        return Err(Error::BoundUndefined);
    }
    let min = sv.min();
    let degenerate = m.nrows() == 1;
    if degenerate {
        log::warn!("shrinkage bound is 0 for a scalar parameter");
    }
    Ok((1.0 - (min / max).sqrt(), degenerate))
}

/// Candidate-output map for one step: `θ ↦ ȳ(θ)`, plus the likelihood used
/// for reweighting.
pub struct OutputModel<'a> {
    model: &'a ModelSpec,
    t: usize,
    base: DVector<f64>,
    sensitivity: Option<DMatrix<f64>>,
    theta_lin: DVector<f64>,
    density: GaussianDensity,
}

impl<'a> OutputModel<'a> {
    /// Output `h(x̂, θ)` at a fixed state with the measurement likelihood.
    pub fn filtered(model: &'a ModelSpec, t: usize, x_hat: &DVector<f64>) -> Result<Self> {
        Ok(Self {
            model,
            t,
            base: x_hat.clone(),
            sensitivity: None,
            theta_lin: DVector::zeros(model.dims().n_theta),
            density: model.measurement_density()?.clone(),
        })
    }

    pub fn for_step(model: &'a ModelSpec, step: &StateStep, mode: PredictionMode, eta: f64) -> Result<Self> {
        match (mode, &step.sensitivity) {
            (PredictionMode::Filtered, _) => Self::filtered(model, step.t, &step.estimate),
            (PredictionMode::Predictive, sens) => {
                let h = state_jacobian(model, step.t, &step.prior_mean, &step.theta_used, eta);
                let cov = linalg::symmetrize(&(&h * &step.prior_cov * h.transpose() + model.measurement_noise_cov()));
                Ok(Self {
                    model,
                    t: step.t,
                    base: step.prior_mean.clone(),
                    sensitivity: sens.clone(),
                    theta_lin: step.theta_used.clone(),
                    density: GaussianDensity::new(&cov)?,
                })
            }
        }
    }

    pub fn state_for(&self, theta: &DVector<f64>) -> DVector<f64> {
        match &self.sensitivity {
            Some(s) => &self.base + s * (theta - &self.theta_lin),
            None => self.base.clone(),
        }
    }

    pub fn output(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.model.output(self.t, &self.state_for(theta), theta)
    }

    /// `ψ` (`n_θ × n_y`).
    pub fn psi(&self, theta: &DVector<f64>, mode: JacobianMode, eta: f64) -> DMatrix<f64> {
        if self.sensitivity.is_none() {
            return output_jacobian(&self.base, theta, self.t, self.model, mode, eta);
        }
        finite_difference(theta, self.model.param_domain(), eta, |th| self.output(th)).transpose()
    }

    pub fn log_likelihood(&self, y: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        self.density.log_density(&(y - self.output(theta)))
    }
}

/// `∂h/∂x` by central differences with a relative step.
fn state_jacobian(model: &ModelSpec, t: usize, x: &DVector<f64>, theta: &DVector<f64>, eta: f64) -> DMatrix<f64> {
    let n_y = model.dims().n_y;
    let mut h = DMatrix::zeros(n_y, x.len());
    for k in 0..x.len() {
        let d = eta * x[k].abs().max(1.0);
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[k] += d;
        minus[k] -= d;
        h.set_column(k, &((model.output(t, &plus, theta) - model.output(t, &minus, theta)) / (2.0 * d)));
    }
    h
}

/// Diagnostics of one parameter-filter step.
#[derive(Debug, Clone)]
pub struct ParamStep {
    pub t: usize,
    /// `θ̂_{t|t}`.
    pub estimate: DVector<f64>,
    /// `h(x̂_{t|t}, θ̂_{t|t})`.
    pub output: DVector<f64>,
    pub ess: f64,
    /// Windowed mean of `½‖ε‖²` at the estimate.
    pub criterion: f64,
    /// Particles whose gradient move could not be projected into the domain.
    pub projection_failures: usize,
    /// Particles outside the domain after the step (should stay 0).
    pub domain_violations: usize,
}

#[derive(Debug, Clone)]
pub struct ParamFilter {
    config: ParamFilterConfig,
    domain: ParamDomain,
    particles: Vec<DVector<f64>>,
    estimate: DVector<f64>,
    cov: DMatrix<f64>,
    recent_losses: std::collections::VecDeque<f64>,
    t: usize,
}

impl ParamFilter {
    /// Starts from the given particles; any outside the domain are clamped.
    pub fn new(config: ParamFilterConfig, domain: ParamDomain, particles: Vec<DVector<f64>>) -> Result<Self> {
        config.validate(domain.dim())?;
        if particles.len() != config.n_particles {
            return Err(Error::Dimension {
                what: "parameter particle count",
                expected: config.n_particles,
                got: particles.len(),
            });
        }
        let particles: Vec<DVector<f64>> = particles.iter().map(|p| domain.clamp(p)).collect();
        let ensemble = smc::ParticleEnsemble::uniform(particles)?;
        let estimate = ensemble.mean();
        let cov = linalg::covariance(ensemble.particles(), CovNorm::Sample);
        Ok(Self {
            config,
            domain,
            particles: ensemble.into_particles(),
            estimate,
            cov,
            recent_losses: Default::default(),
            t: 0,
        })
    }

    /// Initial particles drawn from `N(mean, cov)` and clamped into the domain.
    pub fn from_gaussian<R: Rng + ?Sized>(
        config: ParamFilterConfig,
        domain: ParamDomain,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if !domain.contains(mean) {
            return Err(Error::OutsideDomain(format!("initial parameter mean {:?}", mean.as_slice())));
        }
        let draws = smc::sample_gaussian(cov, config.n_particles, rng)?;
        Self::new(config, domain, draws.into_iter().map(|d| mean + d).collect())
    }

    pub fn config(&self) -> &ParamFilterConfig {
        &self.config
    }

    pub fn domain(&self) -> &ParamDomain {
        &self.domain
    }

    pub fn particles(&self) -> &[DVector<f64>] {
        &self.particles
    }

    pub fn estimate(&self) -> &DVector<f64> {
        &self.estimate
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Covariance `V` used for the kernel noise, floored on the diagonal.
    pub fn kernel_cov(&self) -> DMatrix<f64> {
        let mut v = match self.config.kernel_cov {
            KernelCovariance::Running => self.cov.clone(),
            KernelCovariance::Initial => self.config.evolution_cov(),
        };
        for i in 0..v.nrows() {
            v[(i, i)] = v[(i, i)].max(self.config.cov_floor);
        }
        v
    }

    /// Raw gradient move `γ_t R ψ ε` for one particle, with output scaling.
    pub fn gradient_step(&self, theta: &DVector<f64>, y: &DVector<f64>, out: &OutputModel<'_>, scale: Option<&DVector<f64>>) -> DVector<f64> {
        let gamma = self.config.step_size.at(self.t + 1);
        let mut eps = y - out.output(theta);
        if let Some(s) = scale {
            eps.component_mul_assign(s);
        }
        let r = updating_gain(&eps);
        if gamma == 0.0 || r == 0.0 {
            return DVector::zeros(theta.len());
        }
        let mut psi = out.psi(theta, self.config.jacobian, self.config.fd_step);
        if let Some(s) = scale {
            for (j, sj) in s.iter().enumerate() {
                psi.column_mut(j).scale_mut(*sj);
            }
        }
        psi * eps * (gamma * r)
    }

    /// Projection, shrinkage, kernel noise and final clamp for given raw
    /// gradient moves. Returns `θ̃` and the number of failed projections.
    pub fn evolve_with_steps<R: Rng + ?Sized>(&self, steps: &[DVector<f64>], rng: &mut R) -> Result<(Vec<DVector<f64>>, usize)> {
        let a = self.config.shrinkage;
        let m_bar = linalg::mean(&self.particles);
        let noise_cov = self.kernel_cov() * (1.0 - a * a);
        let factor = linalg::psd_sqrt(&noise_cov)?;
        let mut failures = 0;
        let mut out = Vec::with_capacity(self.particles.len());
        for (theta, step) in self.particles.iter().zip(steps) {
            let p = project_step(theta, step, &self.domain, self.config.projection_factor);
            if p.gave_up && step.iter().any(|v| *v != 0.0) {
                failures += 1;
            }
            let m = p.point;
            let zeta = smc::gaussian_with_factor(&factor, rng);
            let proposed = shrink(&m, &m_bar, a) + zeta;
            out.push(self.domain.pull_inside(&m, &proposed));
        }
        Ok((out, failures))
    }

    /// `θ̃^(j)_{t|t}` for every particle.
    pub fn evolve<R: Rng + ?Sized>(&self, y: &DVector<f64>, out: &OutputModel<'_>, model: &ModelSpec, rng: &mut R) -> Result<(Vec<DVector<f64>>, usize)> {
        let scale = self.config.scaling.factors(model)?;
        let steps: Vec<DVector<f64>> = self
            .particles
            .iter()
            .map(|th| self.gradient_step(th, y, out, scale.as_ref()))
            .collect();
        self.evolve_with_steps(&steps, rng)
    }

    /// Reweight `θ̃` by the output likelihood and resample.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        intermediate: Vec<DVector<f64>>,
        y: &DVector<f64>,
        out: &OutputModel<'_>,
        rng: &mut R,
    ) -> Result<f64> {
        let t = self.t + 1;
        let log_w: Vec<f64> = intermediate.iter().map(|th| out.log_likelihood(y, th)).collect();
        let weights = smc::normalize_log_weights(&log_w).map_err(|e| match e {
            Error::DegenerateWeights => Error::FilterDegenerate {
                role: FilterRole::Parameter,
                step: t,
            },
            other => other,
        })?;
        let ess = smc::effective_sample_size(&weights);
        let idx = smc::resample_residual(&weights, self.config.n_particles, rng);
        self.particles = idx.into_iter().map(|i| intermediate[i].clone()).collect();
        self.estimate = linalg::mean(&self.particles);
        self.cov = linalg::covariance(&self.particles, CovNorm::Sample);
        self.t = t;
        Ok(ess)
    }

    /// One full step driven by the state filter's output at the same time.
    pub fn step<R: Rng + ?Sized>(&mut self, state: &StateStep, y: &DVector<f64>, model: &ModelSpec, rng: &mut R) -> Result<ParamStep> {
        let out = OutputModel::for_step(model, state, self.config.prediction, self.config.fd_step)?;
        let (intermediate, projection_failures) = self.evolve(y, &out, model, rng)?;
        let ess = self.update(intermediate, y, &out, rng)?;
        let domain_violations = self.particles.iter().filter(|p| !self.domain.contains(p)).count();
        let output = model.output(state.t, &state.estimate, &self.estimate);
        let eps = y - &output;
        self.recent_losses.push_back(0.5 * eps.norm_squared());
        while self.recent_losses.len() > self.config.pe_window {
            self.recent_losses.pop_front();
        }
        let criterion = self.recent_losses.iter().sum::<f64>() / self.recent_losses.len() as f64;
        Ok(ParamStep {
            t: self.t,
            estimate: self.estimate.clone(),
            output,
            ess,
            criterion,
            projection_failures,
            domain_violations,
        })
    }

    /// Shrinkage upper bound at the current estimate, using `ψ` at `x̂` and the
    /// measurement covariance as `V_y`.
    pub fn shrinkage_bound(&self, x_hat: &DVector<f64>, t: usize, model: &ModelSpec) -> Result<Option<(f64, bool)>> {
        let Some(p) = &self.config.pmax else {
            return Ok(None);
        };
        let psi = output_jacobian(x_hat, &self.estimate, t, model, self.config.jacobian, self.config.fd_step);
        shrinkage_upper_bound(p.pmax(), &psi, model.measurement_noise_cov(), &self.kernel_cov()).map(Some)
    }
}
