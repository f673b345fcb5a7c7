//! Configuration, single runs, Monte-Carlo campaigns and report emission.

pub mod campaign;
pub mod config;
pub mod scenario;
pub mod tables;

pub use campaign::{monte_carlo, run_campaign, CampaignReport, MonteCarloReport};
pub use config::{Config, EstimatorKind, RunConfig};
pub use scenario::{run_scenario, RunReport};
