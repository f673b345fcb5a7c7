use thiserror::Error;

/// Which of the two cooperating filters raised an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRole {
    State,
    Parameter,
    Augmented,
    Rml,
}

impl std::fmt::Display for FilterRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FilterRole::State => "state",
            FilterRole::Parameter => "parameter",
            FilterRole::Augmented => "augmented",
            FilterRole::Rml => "rml",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    Covariance { min_eigenvalue: f64 },

    #[error("all particle weights vanished")]
    DegenerateWeights,

    #[error("{role} filter: all particle weights vanished at step {step}")]
    FilterDegenerate { role: FilterRole, step: usize },

    #[error("simulation diverged at step {step}")]
    SimulationDivergence { step: usize },

    #[error("filter diverged: non-finite particle {particle}")]
    FilterDivergence { particle: usize },

    #[error("parameter outside admissible domain: {0}")]
    OutsideDomain(String),

    #[error("shrinkage bound undefined: sensitivity matrix has zero spectrum")]
    BoundUndefined,

    #[error("physical domain violation: {0}")]
    PhysicalDomain(String),

    #[error("integration failed at t={time:.4}s: {reason}")]
    Integration { time: f64, reason: String },

    #[error("SPSA gradient undefined: likelihood sum vanished in the {branch} branch")]
    GradientUndefined { branch: &'static str },

    #[error("particle budget is not positive ({0})")]
    Budget(f64),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("calibration needs at least {needed} runs, got {got}")]
    Calibration { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidModel(_) => "invalid_model",
            Error::Config(_) => "config",
            Error::Dimension { .. } => "dimension",
            Error::Covariance { .. } => "covariance",
            Error::DegenerateWeights => "degenerate_weights",
            Error::FilterDegenerate { .. } => "filter_degenerate",
            Error::SimulationDivergence { .. } => "simulation_divergence",
            Error::FilterDivergence { .. } => "filter_divergence",
            Error::OutsideDomain(_) => "outside_domain",
            Error::BoundUndefined => "bound_undefined",
            Error::PhysicalDomain(_) => "physical_domain",
            Error::Integration { .. } => "integration",
            Error::GradientUndefined { .. } => "gradient_undefined",
            Error::Budget(_) => "budget",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Calibration { .. } => "calibration",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Toml(_) => "toml",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
