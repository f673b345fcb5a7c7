use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualsmc::baselines::complexity::{ComplexityReport, CostModel};
use dualsmc::diagnosis::{self, ThresholdBand};
use dualsmc::harness::campaign::{self, calibration_residuals};
use dualsmc::harness::config::ScenarioConfig;
use dualsmc::harness::{scenario, Config, EstimatorKind};
use dualsmc::{Error, Result};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "dualsmc", version, about = "Dual particle-filter estimation, diagnosis and comparison campaigns")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset (paper_defaults, synthetic_campaign, gas_turbine_campaign).
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte-Carlo runs; 0 uses all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the truth trajectory of a scenario.
    Simulate {
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Run one estimator on a simulated scenario.
    Estimate {
        #[arg(long)]
        estimator: Option<EstimatorKind>,
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Calibrate threshold bands from healthy runs.
    Calibrate {
        #[arg(long)]
        estimator: Option<EstimatorKind>,
        /// Number of healthy runs (defaults to the campaign setting).
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Estimate and diagnose one scenario against calibrated bands.
    Diagnose {
        #[arg(long)]
        estimator: Option<EstimatorKind>,
        #[arg(long)]
        scenario: Option<String>,
        /// Bands written by `calibrate`; calibrated on the fly when absent.
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Mixed-fault comparison campaign across estimators.
    Campaign {
        #[arg(long)]
        runs_per_category: Option<usize>,
        #[arg(long)]
        calibration_runs: Option<usize>,
        /// Comma-separated estimator list.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<EstimatorKind>>,
    },
    /// Equivalent-flop totals and matched particle budgets.
    Complexity {
        #[arg(long, default_value_t = 4)]
        nx: usize,
        #[arg(long, default_value_t = 4)]
        ntheta: usize,
        #[arg(long, default_value_t = 5)]
        ny: usize,
        #[arg(long, default_value_t = 10.0)]
        c1: f64,
        #[arg(long, default_value_t = 10.0)]
        c2: f64,
        #[arg(long, default_value_t = 10.0)]
        c3: f64,
        /// Dual particle count.
        #[arg(long, default_value_t = 50.0)]
        n: f64,
    },
}

fn load(common: &Common) -> Result<Config> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), None) => Config::load(path)?,
        (None, Some(p)) => Config::preset(p)?,
        (None, None) => Config::paper_defaults(),
        (Some(_), Some(_)) => return Err(Error::Config("use either --config or --preset (put `preset = ...` in the file)".into())),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.campaign.workers = w;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.run.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &Config, default: &str) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(default))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn calibrate(cfg: &Config, runs: usize) -> Result<ThresholdBand> {
    let (res, failures) = calibration_residuals(&cfg.run, runs, cfg.run.seed, cfg.campaign.workers)?;
    for f in &failures {
        log::warn!("calibration run {} failed: {}", f.id, f.message);
    }
    diagnosis::calibrate_thresholds(&res, &cfg.run.diagnosis.threshold)
}

fn run(cli: Cli) -> Result<Value> {
    let mut cfg = load(&cli.common)?;
    match cli.command {
        Command::Simulate { scenario: sc } => {
            if let Some(s) = sc {
                cfg.run.scenario = ScenarioConfig::Preset(s);
            }
            let s = cfg.run.scenario.resolve()?;
            let setup = scenario::build(&cfg.run, &s)?;
            let truth = dualsmc::simulate(&setup.model, &setup.x0, &setup.thetas, setup.steps, cfg.run.seed)?;
            let dir = out_dir(&cfg, "simulate");
            fs::create_dir_all(&dir)?;
            let path = dir.join("truth.csv");
            truth.write_csv(fs::File::create(&path)?)?;
            Ok(json!({ "command": "simulate", "steps": setup.steps, "truth": path }))
        }
        Command::Estimate { estimator, scenario: sc } => {
            if let Some(e) = estimator {
                cfg.run.estimator = e;
            }
            if let Some(s) = sc {
                cfg.run.scenario = ScenarioConfig::Preset(s);
            }
            let (rep, outcome) = scenario::run_scenario(&cfg.run, None)?;
            let dir = out_dir(&cfg, "estimate");
            scenario::write_run(&dir, &rep, &outcome)?;
            Ok(json!({ "command": "estimate", "estimator": rep.estimator, "out": dir, "domain_violations": rep.domain_violations }))
        }
        Command::Calibrate { estimator, runs } => {
            if let Some(e) = estimator {
                cfg.run.estimator = e;
            }
            let n = runs.unwrap_or(cfg.campaign.calibration_runs);
            let band = calibrate(&cfg, n)?;
            let path = out_dir(&cfg, "calibrate").join("thresholds.json");
            write_json(&path, &band)?;
            Ok(json!({ "command": "calibrate", "runs": n, "thresholds": path }))
        }
        Command::Diagnose { estimator, scenario: sc, thresholds } => {
            if let Some(e) = estimator {
                cfg.run.estimator = e;
            }
            if let Some(s) = sc {
                cfg.run.scenario = ScenarioConfig::Preset(s);
            }
            let band: ThresholdBand = match thresholds {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => calibrate(&cfg, cfg.campaign.calibration_runs)?,
            };
            let (rep, outcome) = scenario::run_scenario(&cfg.run, Some(&band))?;
            let dir = out_dir(&cfg, "diagnose");
            scenario::write_run(&dir, &rep, &outcome)?;
            Ok(json!({
                "command": "diagnose",
                "out": dir,
                "decided_category": rep.decided_category,
                "decisions": rep.decisions,
            }))
        }
        Command::Campaign {
            runs_per_category,
            calibration_runs,
            methods,
        } => {
            if let Some(r) = runs_per_category {
                cfg.campaign.runs_per_category = r;
            }
            if let Some(r) = calibration_runs {
                cfg.campaign.calibration_runs = r;
            }
            if let Some(m) = methods {
                cfg.campaign.methods = m;
            }
            let dir = out_dir(&cfg, "campaign");
            let rep = campaign::run_campaign(&cfg.run, &cfg.campaign, cfg.run.seed, Some(&dir))?;
            campaign::write_campaign(&dir, &rep)?;
            let summary: Vec<Value> = rep
                .methods
                .iter()
                .map(|m| {
                    json!({
                        "estimator": m.estimator,
                        "particles": m.particles,
                        "accuracy": m.metrics.accuracy,
                        "false_positive": m.metrics.false_positive,
                        "failures": m.failures.len(),
                    })
                })
                .collect();
            Ok(json!({ "command": "campaign", "out": dir, "methods": summary, "bootstrap": rep.bootstrap }))
        }
        Command::Complexity { nx, ntheta, ny, c1, c2, c3, n } => {
            let cost = CostModel::new(nx, ntheta, ny, [c1, c2, c3], n);
            let rep = ComplexityReport::matched(&cost)?;
            if let Some(dir) = &cfg.output_dir {
                write_json(&dir.join("complexity.json"), &rep)?;
            }
            Ok(serde_json::to_value(rep)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let v = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{v}");
            ExitCode::from(if matches!(e, Error::Config(_) | Error::Toml(_)) { 2 } else { 1 })
        }
    }
}
