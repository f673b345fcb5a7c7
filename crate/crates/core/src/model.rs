//! Discrete-time nonlinear stochastic system with a multiplicative
//! health-parameter vector.
//!
//! The parameter `θ` reaches the transition and output maps through the
//! effective parameter `θ ⊙ λ(x)`, where `λ` is an optional health map that
//! defaults to the all-ones vector.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, GaussianDensity};
use crate::rng;
use crate::smc;

/// Transition / output maps of a model. Implementations must be pure.
pub trait Dynamics: Send + Sync {
    /// `x_{t+1} = f_t(x_t, θ_eff, ω_t)`.
    fn transition(&self, t: usize, x: &DVector<f64>, theta_eff: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64>;

    /// Noise-free output `h_t(x_t, θ_eff)`.
    fn output(&self, t: usize, x: &DVector<f64>, theta_eff: &DVector<f64>) -> DVector<f64>;

    /// `λ(x)`; `None` means the constant all-ones map.
    fn health_map(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    /// Analytic `∂h/∂θ_eff` (`n_y × n_θ`), when available.
    fn output_jacobian(&self, _t: usize, _x: &DVector<f64>, _theta_eff: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n_theta: usize,
    pub n_y: usize,
}

/// Axis-aligned admissible box for the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                what: "domain bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidModel("parameter domain needs lower < upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; n], vec![upper; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// Componentwise clamp into the box.
    pub fn clamp(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            theta.len(),
            theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(v, (l, u))| v.clamp(*l, *u)),
        )
    }

    /// Largest `s ∈ [0, 1]` with `from + s·(to - from)` inside the box.
    /// `from` must already be inside.
    pub fn max_step_fraction(&self, from: &DVector<f64>, to: &DVector<f64>) -> f64 {
        let mut s: f64 = 1.0;
        for i in 0..from.len() {
            let d = to[i] - from[i];
            if d > 0.0 && to[i] > self.upper[i] {
                s = s.min((self.upper[i] - from[i]) / d);
            } else if d < 0.0 && to[i] < self.lower[i] {
                s = s.min((self.lower[i] - from[i]) / d);
            }
        }
        s.clamp(0.0, 1.0)
    }

    /// Scale the displacement `to - anchor` so the result lands in the box.
    pub fn pull_inside(&self, anchor: &DVector<f64>, to: &DVector<f64>) -> DVector<f64> {
        if self.contains(to) {
            return to.clone();
        }
        let anchor = self.clamp(anchor);
        let s = self.max_step_fraction(&anchor, to);
        // rounding can leave the point a hair outside
        self.clamp(&(&anchor + (to - &anchor) * s))
    }
}

/// A parameter vector known to lie in its domain. Healthy is all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveParameter(DVector<f64>);

impl EffectiveParameter {
    pub fn new(theta: DVector<f64>, domain: &ParamDomain) -> Result<Self> {
        if !domain.contains(&theta) {
            return Err(Error::OutsideDomain(format!("{:?}", theta.as_slice())));
        }
        Ok(Self(theta))
    }

    pub fn healthy(n_theta: usize) -> Self {
        Self(DVector::from_element(n_theta, 1.0))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

/// A complete model: maps, noise covariances and parameter domain.
#[derive(Clone)]
pub struct ModelSpec {
    dims: Dims,
    dynamics: Arc<dyn Dynamics>,
    process_noise_cov: DMatrix<f64>,
    measurement_noise_cov: DMatrix<f64>,
    param_domain: ParamDomain,
    process_noise_factor: DMatrix<f64>,
    measurement_noise_factor: DMatrix<f64>,
    likelihood: Option<GaussianDensity>,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dims", &self.dims)
            .field("process_noise_cov", &self.process_noise_cov)
            .field("measurement_noise_cov", &self.measurement_noise_cov)
            .field("param_domain", &self.param_domain)
            .finish_non_exhaustive()
    }
}

const SYMMETRY_TOL: f64 = 1e-10;

impl ModelSpec {
    /// Validates dimensions, covariance symmetry/semidefiniteness and the
    /// domain. A singular measurement covariance is accepted here (useful for
    /// noise-free simulation); filters call [`ModelSpec::require_filterable`].
    pub fn new(
        dims: Dims,
        dynamics: Arc<dyn Dynamics>,
        process_noise_cov: DMatrix<f64>,
        measurement_noise_cov: DMatrix<f64>,
        param_domain: ParamDomain,
    ) -> Result<Self> {
        if dims.n_x == 0 || dims.n_theta == 0 || dims.n_y == 0 {
            return Err(Error::InvalidModel("dimensions must be positive".into()));
        }
        check_square(&process_noise_cov, dims.n_x, "process noise covariance")?;
        check_square(&measurement_noise_cov, dims.n_y, "measurement noise covariance")?;
        if param_domain.dim() != dims.n_theta {
            return Err(Error::Dimension {
                what: "parameter domain",
                expected: dims.n_theta,
                got: param_domain.dim(),
            });
        }
        for (m, name) in [(&process_noise_cov, "process"), (&measurement_noise_cov, "measurement")] {
            if !linalg::is_symmetric(m, SYMMETRY_TOL) {
                return Err(Error::InvalidModel(format!("{name} noise covariance is not symmetric")));
            }
        }
        let process_noise_factor = linalg::psd_sqrt(&process_noise_cov)?;
        let measurement_noise_factor = linalg::psd_sqrt(&measurement_noise_cov)?;
        let likelihood = GaussianDensity::new(&measurement_noise_cov).ok();
        let spec = Self {
            dims,
            dynamics,
            process_noise_cov,
            measurement_noise_cov,
            param_domain,
            process_noise_factor,
            measurement_noise_factor,
            likelihood,
        };
        let probe = DVector::zeros(dims.n_x);
        if let Some(l) = spec.dynamics.health_map(&probe) {
            if l.len() != dims.n_theta {
                return Err(Error::Dimension {
                    what: "health map output",
                    expected: dims.n_theta,
                    got: l.len(),
                });
            }
        }
        Ok(spec)
    }

    /// Fails unless the measurement covariance is strictly positive definite.
    pub fn require_filterable(&self) -> Result<()> {
        if self.likelihood.is_none() {
            let min = linalg::PsdEigen::new(&self.measurement_noise_cov)?.min();
            return Err(Error::Covariance { min_eigenvalue: min });
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    pub fn process_noise_cov(&self) -> &DMatrix<f64> {
        &self.process_noise_cov
    }

    pub fn measurement_noise_cov(&self) -> &DMatrix<f64> {
        &self.measurement_noise_cov
    }

    pub fn param_domain(&self) -> &ParamDomain {
        &self.param_domain
    }

    pub fn process_noise_factor(&self) -> &DMatrix<f64> {
        &self.process_noise_factor
    }

    /// `θ ⊙ λ(x)`.
    pub fn effective_parameter(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        match self.dynamics.health_map(x) {
            Some(l) => theta.component_mul(&l),
            None => theta.clone(),
        }
    }

    pub fn transition(&self, t: usize, x: &DVector<f64>, theta: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        let eff = self.effective_parameter(x, theta);
        self.dynamics.transition(t, x, &eff, noise)
    }

    pub fn output(&self, t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        let eff = self.effective_parameter(x, theta);
        self.dynamics.output(t, x, &eff)
    }

    /// Analytic `∂h/∂θ` (`n_y × n_θ`) if the dynamics supply one.
    pub fn output_jacobian(&self, t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let eff = self.effective_parameter(x, theta);
        let j = self.dynamics.output_jacobian(t, x, &eff)?;
        Some(match self.dynamics.health_map(x) {
            Some(l) => j * DMatrix::from_diagonal(&l),
            None => j,
        })
    }

    pub fn sample_process_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        smc::gaussian_with_factor(&self.process_noise_factor, rng)
    }

    pub fn sample_measurement_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        smc::gaussian_with_factor(&self.measurement_noise_factor, rng)
    }

    /// `log N(y - ŷ; 0, V)`.
    pub fn log_likelihood(&self, y: &DVector<f64>, y_pred: &DVector<f64>) -> Result<f64> {
        let density = self.likelihood.as_ref().ok_or(Error::Covariance { min_eigenvalue: 0.0 })?;
        Ok(density.log_density(&(y - y_pred)))
    }

    pub fn measurement_density(&self) -> Result<&GaussianDensity> {
        self.likelihood.as_ref().ok_or(Error::Covariance { min_eigenvalue: 0.0 })
    }
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &'static str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension {
            what,
            expected: n,
            got: m.nrows().max(m.ncols()),
        });
    }
    Ok(())
}

/// Simulated truth: `T + 1` states, `T` outputs and the parameters in force.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0 .. x_T`.
    pub states: Vec<DVector<f64>>,
    /// `y_1 .. y_T`, `y_t = h(x_t, θ_t) + ν_t`.
    pub outputs: Vec<DVector<f64>>,
    /// `θ_1 .. θ_T`.
    pub thetas: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// CSV with header `t,x_1..,y_1..,theta_1..`; row `t = 0` carries the
    /// initial state and empty output/parameter cells.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n_x = self.states.first().map_or(0, |v| v.len());
        let n_y = self.outputs.first().map_or(0, |v| v.len());
        let n_theta = self.thetas.first().map_or(0, |v| v.len());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n_x).map(|i| format!("x_{i}")));
        header.extend((1..=n_y).map(|i| format!("y_{i}")));
        header.extend((1..=n_theta).map(|i| format!("theta_{i}")));
        w.write_record(&header)?;
        for (t, x) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| fmt_num(*v)));
            if t == 0 {
                row.extend(std::iter::repeat_n(String::new(), n_y + n_theta));
            } else {
                row.extend(self.outputs[t - 1].iter().map(|v| fmt_num(*v)));
                row.extend(self.thetas[t - 1].iter().map(|v| fmt_num(*v)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal representation.
pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// Simulate `steps` transitions from `x0`. `theta_trajectory[t - 1]` is the
/// parameter in force for the transition into `x_t` and for `y_t`.
pub fn simulate(
    model: &ModelSpec,
    x0: &DVector<f64>,
    theta_trajectory: &[DVector<f64>],
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let dims = model.dims();
    if x0.len() != dims.n_x {
        return Err(Error::Dimension {
            what: "initial state",
            expected: dims.n_x,
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::SimulationDivergence { step: 0 });
    }
    if theta_trajectory.len() < steps {
        return Err(Error::Dimension {
            what: "parameter trajectory length",
            expected: steps,
            got: theta_trajectory.len(),
        });
    }
    let mut rng = rng::stream(seed, rng::streams::SIMULATION);
    let mut states = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps);
    let mut thetas = Vec::with_capacity(steps);
    states.push(x0.clone());
    let mut x = x0.clone();
    for t in 1..=steps {
        let theta = &theta_trajectory[t - 1];
        let w = model.sample_process_noise(&mut rng);
        x = model.transition(t - 1, &x, theta, &w);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationDivergence { step: t });
        }
        let v = model.sample_measurement_noise(&mut rng);
        let y = model.output(t, &x, theta) + v;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationDivergence { step: t });
        }
        states.push(x.clone());
        outputs.push(y);
        thetas.push(theta.clone());
    }
    Ok(Trajectory {
        states,
        outputs,
        thetas,
    })
}

/// Closure-backed [`Dynamics`] for small models and tests.
pub struct FnDynamics<F, H>
where
    F: Fn(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync,
    H: Fn(usize, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync,
{
    pub transition: F,
    pub output: H,
}

impl<F, H> Dynamics for FnDynamics<F, H>
where
    F: Fn(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync,
    H: Fn(usize, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn transition(&self, t: usize, x: &DVector<f64>, theta: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        (self.transition)(t, x, theta, noise)
    }

    fn output(&self, t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        (self.output)(t, x, theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_model<F, H>(f: F, h: H, l: f64, v: f64) -> ModelSpec
    where
        F: Fn(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(usize, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        ModelSpec::new(
            Dims {
                n_x: 1,
                n_theta: 1,
                n_y: 1,
            },
            Arc::new(FnDynamics {
                transition: f,
                output: h,
            }),
            DMatrix::from_element(1, 1, l),
            DMatrix::from_element(1, 1, v),
            ParamDomain::uniform(1, 0.0, 2.0).unwrap(),
        )
        .unwrap()
    }

    fn ones(n: usize) -> Vec<DVector<f64>> {
        vec![DVector::from_element(1, 1.0); n]
    }

    #[test]
    fn zero_noise_identity_is_fixed_point() {
        let m = scalar_model(|_, x, _, w| x + w, |_, x, _| x.clone(), 0.0, 0.0);
        let tr = simulate(&m, &DVector::from_element(1, 1.0), &ones(3), 3, 0).unwrap();
        assert_eq!(tr.states.len(), 4);
        assert_eq!(tr.outputs.len(), 3);
        assert!(tr.states.iter().all(|x| x[0] == 1.0));
    }

    #[test]
    fn healthy_multiplicative_output() {
        let m = scalar_model(|_, x, _, _| x.clone(), |_, x, th| x * th[0], 0.0, 0.0);
        let tr = simulate(&m, &DVector::from_element(1, 2.0), &ones(1), 1, 0).unwrap();
        assert_eq!(tr.outputs[0][0], 2.0);
    }

    #[test]
    fn ar1_stationary_variance() {
        let l = 0.5;
        let m = scalar_model(|_, x, _, w| x * 0.9 + w, |_, x, _| x.clone(), l, 1.0);
        let steps = 100;
        let tr = simulate(&m, &DVector::from_element(1, 0.0), &ones(steps), steps, 42).unwrap();
        let xs: Vec<f64> = tr.states.iter().map(|x| x[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let stationary = l / (1.0 - 0.81);
        assert!((var - stationary).abs() < 0.2 * stationary, "{var} vs {stationary}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = scalar_model(|_, x, _, w| x * 0.5 + w, |_, x, _| x.clone(), 1.0, 1.0);
        let a = simulate(&m, &DVector::from_element(1, 0.3), &ones(50), 50, 9).unwrap();
        let b = simulate(&m, &DVector::from_element(1, 0.3), &ones(50), 50, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_reports_step() {
        let m = scalar_model(|t, x, _, _| if t == 2 { x * f64::NAN } else { x.clone() }, |_, x, _| x.clone(), 0.0, 1.0);
        let err = simulate(&m, &DVector::from_element(1, 1.0), &ones(5), 5, 0).unwrap_err();
        assert!(matches!(err, Error::SimulationDivergence { step: 3 }));
    }

    #[test]
    fn invalid_models_rejected() {
        let dyn_ = Arc::new(FnDynamics {
            transition: |_: usize, x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>| x.clone(),
            output: |_: usize, x: &DVector<f64>, _: &DVector<f64>| x.clone(),
        });
        let dims = Dims {
            n_x: 1,
            n_theta: 1,
            n_y: 1,
        };
        let asym = ModelSpec::new(
            Dims { n_x: 2, ..dims },
            dyn_.clone(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DMatrix::identity(1, 1),
            ParamDomain::uniform(1, 0.0, 1.0).unwrap(),
        );
        assert!(asym.is_err());
        assert!(ParamDomain::new(vec![1.0], vec![1.0]).is_err());
        let singular_v = ModelSpec::new(
            dims,
            dyn_,
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            ParamDomain::uniform(1, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!(singular_v.require_filterable().is_err());
    }

    #[test]
    fn domain_pull_inside_scales_displacement() {
        let d = ParamDomain::uniform(2, 0.0, 1.0).unwrap();
        let anchor = DVector::from_vec(vec![0.5, 0.5]);
        let out = d.pull_inside(&anchor, &DVector::from_vec(vec![1.5, 0.75]));
        assert_relative_eq!(out[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(out[1], 0.625, epsilon = 1e-12);
        assert!(d.contains(&out));
    }

    #[test]
    fn csv_header_and_rows() {
        let m = scalar_model(|_, x, _, w| x + w, |_, x, _| x.clone(), 0.0, 0.0);
        let tr = simulate(&m, &DVector::from_element(1, 1.0), &ones(2), 2, 0).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x_1,y_1,theta_1"));
        assert_eq!(lines.next(), Some("0,1.0,,"));
        assert_eq!(lines.count(), 2);
    }
}
