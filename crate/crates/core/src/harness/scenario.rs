//! Single runs: truth simulation, estimation, diagnosis and MAE% tables.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::{Budget, EstimatorKind, ModelConfig, RunConfig};
use super::tables::{phase_names, MaeTable};
use crate::baselines::complexity::{reference_budget, CostModel, Reference};
use crate::baselines::{BayesianEstimator, RmlEstimator};
use crate::diagnosis::{self, ComponentDecision, HealthyBaseline, ThresholdBand, CATEGORIES};
use crate::dual::{DualEstimator, EstimationTrajectory, Estimator, Prior};
use crate::error::{Error, Result};
use crate::gas_turbine::{self, EngineConstants, FaultScenario};
use crate::model::{fmt_num, simulate, ModelSpec, Trajectory};
use crate::synthetic;

/// Everything needed to simulate and estimate one scenario.
pub struct Setup {
    pub model: ModelSpec,
    pub x0: DVector<f64>,
    pub nominal_state: Vec<f64>,
    pub nominal_output: Vec<f64>,
    pub scenario: FaultScenario,
    pub thetas: Vec<DVector<f64>>,
    pub steps: usize,
    pub dt: f64,
}

pub fn build(run: &RunConfig, scenario: &FaultScenario) -> Result<Setup> {
    run.validate()?;
    let steps = run.steps();
    let (model, x0, nominal_output) = match &run.model {
        ModelConfig::GasTurbine { design, noise } => {
            let c = EngineConstants::from_design(design.clone())?;
            let nominal = gas_turbine::nominal_outputs(&c);
            let x0 = c.nominal.to_vector();
            let m = gas_turbine::model(c, scenario.fuel_step, noise)?;
            (m, x0, nominal)
        }
        ModelConfig::Synthetic { plant, noise } => {
            let mut plant = plant.clone();
            match scenario.fuel_step {
                Some(f) => {
                    plant.input_time = (f.time / run.dt).round() as usize;
                    plant.input_step = f.fraction;
                }
                None => plant.input_step = 0.0,
            }
            let x0 = plant.equilibrium();
            let healthy = DVector::from_element(4, 1.0);
            let y0: Vec<f64> = crate::model::Dynamics::output(&plant, 0, &x0, &healthy).iter().copied().collect();
            (synthetic::four_component(plant, noise)?, x0, y0)
        }
    };
    Ok(Setup {
        thetas: scenario.theta_trajectory(steps, run.dt),
        nominal_state: x0.iter().copied().collect(),
        nominal_output,
        scenario: scenario.clone(),
        model,
        x0,
        steps,
        dt: run.dt,
    })
}

/// `(dual, bayesian, rml)` particle counts.
pub fn particle_counts(run: &RunConfig) -> Result<(usize, usize, usize)> {
    let n = run.dual.param.n_particles;
    match run.budget {
        Budget::Configured => Ok((n, run.bayesian.n_particles, run.rml.n_particles)),
        Budget::Matched { c1, c2, c3 } => {
            let dims = match run.model {
                ModelConfig::GasTurbine { .. } => (gas_turbine::N_X, gas_turbine::N_THETA, gas_turbine::N_Y),
                ModelConfig::Synthetic { .. } => (4, 4, 5),
            };
            let cost = CostModel::new(dims.0, dims.1, dims.2, [c1, c2, c3], n as f64);
            let nb = reference_budget(Reference::Bayesian, n as f64, &cost)?.round() as usize;
            let nm = reference_budget(Reference::Rml, n as f64, &cost)?.round() as usize;
            Ok((n, nb.max(2), nm.max(2)))
        }
    }
}

fn priors(run: &RunConfig, setup: &Setup) -> Result<(Prior, Prior)> {
    let dims = setup.model.dims();
    let state_var = if run.prior.state_var.is_empty() {
        setup.model.process_noise_cov().diagonal().iter().copied().collect()
    } else {
        run.prior.state_var.clone()
    };
    let theta_mean = if run.prior.theta_mean.is_empty() {
        vec![1.0; dims.n_theta]
    } else {
        run.prior.theta_mean.clone()
    };
    let theta_var = if run.prior.theta_var.is_empty() {
        vec![1e-3; dims.n_theta]
    } else {
        run.prior.theta_var.clone()
    };
    if state_var.len() != dims.n_x || theta_mean.len() != dims.n_theta || theta_var.len() != dims.n_theta {
        return Err(Error::Config("prior dimensions do not match the model".into()));
    }
    Ok((
        Prior::diagonal(setup.x0.as_slice(), &state_var),
        Prior::diagonal(&theta_mean, &theta_var),
    ))
}

pub fn make_estimator(run: &RunConfig, kind: EstimatorKind, setup: &Setup, seed: u64) -> Result<Box<dyn Estimator>> {
    let (x0, th0) = priors(run, setup)?;
    let (n, nb, nm) = particle_counts(run)?;
    let model = setup.model.clone();
    Ok(match kind {
        EstimatorKind::Dual => {
            let mut cfg = run.dual.clone();
            cfg.state.n_particles = n;
            Box::new(DualEstimator::new(model, &x0, &th0, cfg, seed)?)
        }
        EstimatorKind::Bayesian => {
            let mut cfg = run.bayesian.clone();
            cfg.n_particles = nb;
            Box::new(BayesianEstimator::new(model, &x0, &th0, cfg, seed)?)
        }
        EstimatorKind::Rml => {
            let mut cfg = run.rml.clone();
            cfg.n_particles = nm;
            Box::new(RmlEstimator::new(model, &x0, &th0.mean, cfg, seed)?)
        }
    })
}

/// Truth, estimates and wall-clock time per estimator step.
pub struct RunOutcome {
    pub truth: Trajectory,
    pub estimates: EstimationTrajectory,
    pub step_seconds: f64,
}

pub fn execute(run: &RunConfig, kind: EstimatorKind, setup: &Setup, seed: u64) -> Result<RunOutcome> {
    let truth = simulate(&setup.model, &setup.x0, &setup.thetas, setup.steps, seed)?;
    let mut est = make_estimator(run, kind, setup, seed)?;
    let start = Instant::now();
    for y in &truth.outputs {
        est.step(y)?;
    }
    let step_seconds = start.elapsed().as_secs_f64() / setup.steps.max(1) as f64;
    Ok(RunOutcome {
        truth,
        estimates: EstimationTrajectory {
            rows: est.history().to_vec(),
        },
        step_seconds,
    })
}

/// Baseline fitted on the configured window and the residual series
/// (index `i` is step `i + 1`).
pub fn residuals(run: &RunConfig, estimates: &EstimationTrajectory) -> Result<(HealthyBaseline, Vec<DVector<f64>>)> {
    let d = &run.diagnosis;
    let theta = estimates.theta_series();
    if d.baseline_end > theta.len() {
        return Err(Error::Config(format!(
            "baseline window ends at step {} but the run has {} steps",
            d.baseline_end,
            theta.len()
        )));
    }
    let baseline = diagnosis::fit_healthy_baseline(&theta[d.baseline_start..d.baseline_end], d.baseline_end - d.baseline_start)?;
    let r = diagnosis::residual_series(&baseline, &theta)?;
    Ok((baseline, r))
}

fn step_decisions(mut ds: Vec<ComponentDecision>) -> Vec<ComponentDecision> {
    for d in &mut ds {
        d.t_detect = d.t_detect.map(|t| t + 1);
        d.t_confirmed = d.t_confirmed.map(|t| t + 1);
    }
    ds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub estimator: String,
    pub seed: u64,
    pub scenario: FaultScenario,
    pub steps: usize,
    pub particles: usize,
    pub baseline: HealthyBaseline,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<ThresholdBand>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decisions: Option<Vec<ComponentDecision>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decided_category: Option<String>,
    pub mae: Vec<MaeTable>,
    pub domain_violations: usize,
    pub particle_steps: usize,
}

/// Steps at which each phase starts: 0 then every distinct onset.
pub fn phase_starts(scenario: &FaultScenario, dt: f64, steps: usize) -> Vec<usize> {
    let mut s = vec![0];
    for t in scenario.onsets() {
        let k = (t / dt).round() as usize;
        if k > 0 && k < steps && !s.contains(&k) {
            s.push(k);
        }
    }
    s
}

/// MAE% of states, parameters and outputs over the last `window` steps of
/// each phase.
pub fn mae_tables(setup: &Setup, outcome: &RunOutcome, window: usize) -> Result<Vec<MaeTable>> {
    let rows = &outcome.estimates.rows;
    let n = rows.len();
    let starts = phase_starts(&setup.scenario, setup.dt, n);
    let phases = phase_names(starts.len());
    let ranges: Vec<std::ops::Range<usize>> = starts
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let end = starts.get(k + 1).copied().unwrap_or(n);
            end.saturating_sub(window).max(*s)..end
        })
        .collect();
    let truth = &outcome.truth;
    let true_outputs: Vec<DVector<f64>> = (1..=n)
        .map(|t| setup.model.output(t, &truth.states[t], &setup.thetas[t - 1]))
        .collect();
    let groups: [(&str, Vec<f64>, Box<dyn Fn(usize, usize) -> (f64, f64)>); 3] = [
        (
            "state",
            setup.nominal_state.clone(),
            Box::new(|i, k| (rows[i].x_hat[k], truth.states[i + 1][k])),
        ),
        (
            "parameter",
            vec![1.0; setup.model.dims().n_theta],
            Box::new(|i, k| (rows[i].theta_hat[k], setup.thetas[i][k])),
        ),
        (
            "output",
            setup.nominal_output.clone(),
            Box::new(|i, k| (rows[i].y_hat[k], true_outputs[i][k])),
        ),
    ];
    let mut tables = Vec::new();
    for (group, nominal, get) in groups.iter() {
        let mut table = MaeTable::new(group, phases.clone());
        for (k, nom) in nominal.iter().enumerate() {
            let (est, tru): (Vec<f64>, Vec<f64>) = (0..n).map(|i| get(i, k)).unzip();
            let values = ranges
                .iter()
                .map(|r| diagnosis::mae_percent(&est, &tru, *nom, r.clone()).ok())
                .collect();
            table.push(format!("{}_{}", group, k + 1), values);
        }
        tables.push(table);
    }
    Ok(tables)
}

/// Diagnose an executed run. Decisions need a calibrated band.
pub fn report(run: &RunConfig, kind: EstimatorKind, setup: &Setup, outcome: &RunOutcome, seed: u64, band: Option<&ThresholdBand>) -> Result<RunReport> {
    let (baseline, r) = residuals(run, &outcome.estimates)?;
    let decisions = band
        .map(|b| diagnosis::decide(&r, b, &run.diagnosis.decision).map(step_decisions))
        .transpose()?;
    let decided_category = decisions.as_ref().map(|d| CATEGORIES[diagnosis::classify(d)].to_string());
    let (n, nb, nm) = particle_counts(run)?;
    let rows = &outcome.estimates.rows;
    Ok(RunReport {
        estimator: kind.name().into(),
        seed,
        scenario: setup.scenario.clone(),
        steps: setup.steps,
        particles: match kind {
            EstimatorKind::Dual => n,
            EstimatorKind::Bayesian => nb,
            EstimatorKind::Rml => nm,
        },
        baseline,
        band: band.cloned(),
        decisions,
        decided_category,
        mae: mae_tables(setup, outcome, run.mae_window)?,
        domain_violations: rows.iter().map(|r| r.domain_violations).sum(),
        particle_steps: rows.iter().map(|r| r.particles_checked).sum(),
    })
}

/// Simulate, estimate and diagnose `run.scenario` with `run.estimator`.
pub fn run_scenario(run: &RunConfig, band: Option<&ThresholdBand>) -> Result<(RunReport, RunOutcome)> {
    let scenario = run.scenario.resolve()?;
    let setup = build(run, &scenario)?;
    let outcome = execute(run, run.estimator, &setup, run.seed)?;
    let rep = report(run, run.estimator, &setup, &outcome, run.seed, band)?;
    Ok((rep, outcome))
}

/// `trajectory.csv`, `residuals.csv`, `report.json` and `timing.json`.
pub fn write_run(dir: &Path, rep: &RunReport, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trajectory(&dir.join("trajectory.csv"), outcome)?;
    let base = rep.baseline.theta();
    let mut w = csv::Writer::from_path(dir.join("residuals.csv"))?;
    let n_theta = base.len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n_theta).map(|k| format!("r_{k}")));
    if rep.band.is_some() {
        header.extend((1..=n_theta).map(|k| format!("lower_{k}")));
        header.extend((1..=n_theta).map(|k| format!("upper_{k}")));
    }
    w.write_record(&header)?;
    for row in &outcome.estimates.rows {
        let r = &base - &row.theta_hat;
        let mut rec = vec![row.t.to_string()];
        rec.extend(r.iter().map(|v| fmt_num(*v)));
        if let Some(b) = &rep.band {
            rec.extend(b.lower.iter().map(|v| fmt_num(*v)));
            rec.extend(b.upper.iter().map(|v| fmt_num(*v)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(rep)? + "\n")?;
    let timing = serde_json::json!({ "seconds_per_step": outcome.step_seconds });
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    Ok(())
}

/// Truth and estimates side by side.
pub fn write_trajectory(path: &Path, outcome: &RunOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let rows = &outcome.estimates.rows;
    let truth = &outcome.truth;
    let Some(first) = rows.first() else {
        w.write_record(["t"])?;
        w.flush()?;
        return Ok(());
    };
    let (nx, nth, ny) = (first.x_hat.len(), first.theta_hat.len(), first.y_hat.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=nx).map(|k| format!("x_{k}")));
    header.extend((1..=nth).map(|k| format!("theta_{k}")));
    header.extend((1..=ny).map(|k| format!("y_{k}")));
    header.extend((1..=nx).map(|k| format!("xhat_{k}")));
    header.extend((1..=nth).map(|k| format!("thetahat_{k}")));
    header.extend((1..=ny).map(|k| format!("yhat_{k}")));
    w.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec = vec![r.t.to_string()];
        let cols: [&DVector<f64>; 6] = [&truth.states[i + 1], &truth.thetas[i], &truth.outputs[i], &r.x_hat, &r.theta_hat, &r.y_hat];
        for c in cols {
            rec.extend(c.iter().map(|v| fmt_num(*v)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
