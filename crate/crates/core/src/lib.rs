//! Sequential Monte Carlo estimators for joint state and time-varying
//! parameter estimation of nonlinear stochastic systems.
//!
//! The central estimator is a dual particle filter: a regularized bootstrap
//! filter tracks the state using the latest parameter estimate, and a
//! prediction-error driven kernel-smoothing filter tracks the parameters
//! using the latest state estimate. Around it sit a gas-turbine plant model,
//! residual-based fault diagnosis, two baseline estimators, an
//! equivalent-flop cost model and a Monte-Carlo campaign harness.

pub mod baselines;
pub mod diagnosis;
pub mod dual;
pub mod error;
pub mod gas_turbine;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod param_filter;
pub mod rng;
pub mod smc;
pub mod state_filter;
pub mod synthetic;

pub use dual::{DualConfig, DualEstimator, EstimateRow, EstimationTrajectory, Estimator, Prior};
pub use error::{Error, FilterRole, Result};
pub use model::{simulate, Dims, Dynamics, EffectiveParameter, FnDynamics, ModelSpec, ParamDomain, Trajectory};
pub use param_filter::{ParamFilter, ParamFilterConfig, PredictionMode};
pub use smc::{Kernel, ParticleEnsemble, RegularizationConfig};

pub use state_filter::{StateFilter, StateFilterConfig};

pub use nalgebra::{DMatrix, DVector};
