//! Run and campaign configuration, TOML loading and named presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BayesianConfig, RmlConfig};
use crate::diagnosis::{DecisionConfig, ThresholdConfig};
use crate::dual::DualConfig;
use crate::error::{Error, Result};
use crate::gas_turbine::{self, DesignPoint, EngineNoise, FaultScenario};
use crate::param_filter::{KernelCovariance, OutputScaling, ParamFilterConfig, StepSize};
use crate::smc::RegularizationConfig;
use crate::state_filter::StateFilterConfig;
use crate::synthetic::{FourComponent, SyntheticNoise};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    GasTurbine {
        #[serde(default)]
        design: DesignPoint,
        #[serde(default)]
        noise: EngineNoise,
    },
    Synthetic {
        #[serde(default)]
        plant: FourComponent,
        #[serde(default)]
        noise: SyntheticNoise,
    },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::GasTurbine {
            design: DesignPoint::default(),
            noise: EngineNoise::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Dual,
    Bayesian,
    Rml,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Dual, EstimatorKind::Rml, EstimatorKind::Bayesian];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Dual => "dual",
            EstimatorKind::Bayesian => "bayesian",
            EstimatorKind::Rml => "rml",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(EstimatorKind::Dual),
            "bayesian" => Ok(EstimatorKind::Bayesian),
            "rml" => Ok(EstimatorKind::Rml),
            _ => Err(Error::Config(format!("unknown estimator '{s}'"))),
        }
    }
}

/// Named preset or an explicit event list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioConfig {
    Preset(String),
    Custom(FaultScenario),
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::Preset("healthy".into())
    }
}

impl ScenarioConfig {
    pub fn resolve(&self) -> Result<FaultScenario> {
        let s = match self {
            ScenarioConfig::Preset(name) => FaultScenario::preset(name).ok_or_else(|| Error::Config(format!("unknown scenario '{name}'")))?,
            ScenarioConfig::Custom(s) => s.clone(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn name(&self) -> String {
        match self {
            ScenarioConfig::Preset(name) => name.clone(),
            ScenarioConfig::Custom(_) => "custom".into(),
        }
    }
}

/// How baseline particle counts are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Budget {
    /// Use the counts in the baseline sections as given.
    Configured,
    /// Derive them from the dual particle count with the EF budget equations.
    Matched { c1: f64, c2: f64, c3: f64 },
}

impl Default for Budget {
    fn default() -> Self {
        Budget::Configured
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Initial state variances; empty means the process-noise variances.
    pub state_var: Vec<f64>,
    /// Initial parameter mean; empty means healthy (all ones).
    pub theta_mean: Vec<f64>,
    /// Initial parameter variances; empty means `1e-3` each.
    pub theta_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosisConfig {
    /// Healthy-baseline window `[baseline_start, baseline_end)` in steps.
    pub baseline_start: usize,
    pub baseline_end: usize,
    pub threshold: ThresholdConfig,
    pub decision: DecisionConfig,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        Self {
            baseline_start: 200,
            baseline_end: 300,
            threshold: ThresholdConfig {
                skip: 300,
                ..Default::default()
            },
            // Short persistence trips on post-fault transients in neighbouring
            // components and on healthy excursions over long runs.
            decision: DecisionConfig {
                start: 300,
                persistence: 20,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub estimator: EstimatorKind,
    pub scenario: ScenarioConfig,
    /// Seconds.
    pub duration: f64,
    /// Sampling period in seconds.
    pub dt: f64,
    pub seed: u64,
    pub dual: DualConfig,
    pub bayesian: BayesianConfig,
    pub rml: RmlConfig,
    pub budget: Budget,
    pub prior: PriorConfig,
    pub diagnosis: DiagnosisConfig,
    /// Window (steps) at the end of each phase used for MAE%.
    pub mae_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Config::paper_defaults().run
    }
}

impl RunConfig {
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !(self.dt > 0.0) || self.steps() == 0 {
            return Err(Error::Config(format!("duration {} s must be positive and cover at least one step", self.duration)));
        }
        let n = self.dual.state.n_particles;
        if n < 2 || self.dual.param.n_particles < 2 {
            return Err(Error::Config("particle counts must be at least 2".into()));
        }
        let d = &self.diagnosis;
        if d.baseline_end <= d.baseline_start + 1 {
            return Err(Error::Config("baseline window needs at least 2 steps".into()));
        }
        if self.mae_window == 0 {
            return Err(Error::Config("mae_window must be positive".into()));
        }
        self.scenario.resolve()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    /// Mixed-fault runs per category (four single faults plus no fault).
    pub runs_per_category: usize,
    /// Healthy runs used to calibrate thresholds.
    pub calibration_runs: usize,
    /// Fault onset, seconds.
    pub fault_time: f64,
    /// Fractional loss of the faulty component.
    pub magnitude: f64,
    pub methods: Vec<EstimatorKind>,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub bootstrap: usize,
    /// Also write a run directory (trajectory, residuals, report) per run.
    pub write_runs: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            runs_per_category: 7,
            calibration_runs: 25,
            fault_time: 3.5,
            magnitude: 0.05,
            methods: EstimatorKind::ALL.to_vec(),
            workers: 0,
            bootstrap: 2000,
            write_runs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub run: RunConfig,
    pub campaign: CampaignConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self::paper_defaults()
    }
}

pub const PRESETS: [&str; 3] = ["paper_defaults", "synthetic_campaign", "gas_turbine_campaign"];

impl Config {
    /// Engine run with the published run constants: 10 ms sampling, N = 50,
    /// a = 0.93, γ = 0.9 (dual) and 0.05 (RML), N_B = 45, N_M = 150 and a
    /// 2 s convergence window.
    pub fn paper_defaults() -> Self {
        let noise = EngineNoise::default();
        let c = gas_turbine::EngineConstants::default();
        let dual = DualConfig {
            state: StateFilterConfig {
                n_particles: 50,
                regularization: RegularizationConfig::default(),
                ..Default::default()
            },
            param: ParamFilterConfig {
                n_particles: 50,
                shrinkage: 0.93,
                step_size: StepSize::Constant { gamma: 0.9 },
                evolution_var: vec![1e-4; 4],
                kernel_cov: KernelCovariance::Initial,
                scaling: OutputScaling::Nominal(gas_turbine::nominal_outputs(&c)),
                ..Default::default()
            },
        };
        Self {
            run: RunConfig {
                model: ModelConfig::GasTurbine {
                    design: DesignPoint::default(),
                    noise,
                },
                estimator: EstimatorKind::Dual,
                scenario: ScenarioConfig::Preset("scenario_I_concurrent".into()),
                duration: 24.0,
                dt: gas_turbine::DT,
                seed: 0,
                dual,
                bayesian: BayesianConfig {
                    n_particles: 45,
                    evolution_var: vec![1e-4; 4],
                    kernel_cov: KernelCovariance::Initial,
                    ..Default::default()
                },
                rml: RmlConfig {
                    n_particles: 150,
                    ..Default::default()
                },
                budget: Budget::Configured,
                prior: PriorConfig::default(),
                diagnosis: DiagnosisConfig::default(),
                mae_window: 200,
            },
            campaign: CampaignConfig::default(),
            output_dir: None,
        }
    }

    /// Four-component synthetic plant with budgets matched to a 50-particle
    /// dual filter.
    pub fn synthetic_campaign() -> Self {
        let mut cfg = Self::paper_defaults();
        let r = &mut cfg.run;
        r.model = ModelConfig::Synthetic {
            plant: FourComponent::default(),
            noise: SyntheticNoise::default(),
        };
        r.scenario = ScenarioConfig::Preset("healthy".into());
        r.duration = 7.0;
        r.dual.param.evolution_var = vec![3e-3; 4];
        r.dual.param.scaling = OutputScaling::Raw;
        r.bayesian.evolution_var = vec![3e-3; 4];
        r.dual.param.kernel_cov = KernelCovariance::Running;
        r.bayesian.kernel_cov = KernelCovariance::Running;
        r.rml.step_size = StepSize::Constant { gamma: 3e-5 };
        r.prior.theta_var = vec![0.01; 4];
        r.budget = Budget::Matched {
            c1: 10.0,
            c2: 10.0,
            c3: 10.0,
        };
        cfg
    }

    pub fn gas_turbine_campaign() -> Self {
        let mut cfg = Self::paper_defaults();
        cfg.run.scenario = ScenarioConfig::Preset("healthy".into());
        cfg.run.duration = 7.0;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper_defaults" => Ok(Self::paper_defaults()),
            "synthetic_campaign" => Ok(Self::synthetic_campaign()),
            "gas_turbine_campaign" => Ok(Self::gas_turbine_campaign()),
            _ => Err(Error::Config(format!("unknown preset '{name}' (known: {})", PRESETS.join(", ")))),
        }
    }

    /// Parse TOML. A top-level `preset = "<name>"` key selects the base
    /// configuration that the remaining keys override.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut user: toml::Table = toml::from_str(text)?;
        let base = match user.remove("preset") {
            Some(toml::Value::String(name)) => Self::preset(&name)?,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => Self::paper_defaults(),
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Config = toml::Value::Table(merged).try_into()?;
        cfg.run.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Recursive table merge; `over` wins.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESETS {
            let cfg = Config::preset(name).unwrap();
            let text = cfg.to_toml().unwrap();
            let back = Config::from_toml_str(&format!("preset = \"{name}\"\n{text}")).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn overrides_merge_into_preset() {
        let cfg = Config::from_toml_str("preset = \"synthetic_campaign\"\n[run]\nseed = 9\n[run.dual.param]\nshrinkage = 0.9\n").unwrap();
        assert_eq!(cfg.run.seed, 9);
        assert_eq!(cfg.run.dual.param.shrinkage, 0.9);
        assert_eq!(cfg.run.dual.param.n_particles, 50);
        assert!(matches!(cfg.run.model, ModelConfig::Synthetic { .. }));
    }

    #[test]
    fn zero_duration_rejected() {
        let r = Config::from_toml_str("[run]\nduration = 0.0\n");
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(Config::from_toml_str("preset = \"nope\"").is_err());
    }

    #[test]
    fn paper_constants() {
        let c = Config::paper_defaults();
        assert_eq!(c.run.dt, 0.01);
        assert_eq!(c.run.dual.param.n_particles, 50);
        assert_eq!(c.run.dual.param.shrinkage, 0.93);
        assert_eq!(c.run.dual.param.step_size, StepSize::Constant { gamma: 0.9 });
        assert_eq!(c.run.rml.step_size, StepSize::Constant { gamma: 0.05 });
        assert_eq!((c.run.bayesian.n_particles, c.run.rml.n_particles), (45, 150));
        assert_eq!(c.run.diagnosis.baseline_start, 200);
    }
}
