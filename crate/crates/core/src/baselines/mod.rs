//! Comparison estimators and the equivalent-flop cost model.

pub mod bayesian;
pub mod complexity;
pub mod rml;

pub use bayesian::{BayesianConfig, BayesianEstimator};
pub use complexity::{ef_complexity, match_particle_budget, reference_budget, CostModel, Method, Reference};
pub use rml::{RmlConfig, RmlEstimator};
