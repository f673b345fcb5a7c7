//! Monte-Carlo campaigns: repeated seeded runs, threshold calibration,
//! confusion matrices and a paired bootstrap over the mixed-fault design.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Budget, CampaignConfig, EstimatorKind, ModelConfig, RunConfig};
use super::scenario::{self, RunReport};
use super::tables::{phase_names, MaeTable};
use crate::baselines::complexity::{ComplexityReport, CostModel};
use crate::diagnosis::{self, ConfusionMatrix, ConfusionMetrics, ThresholdBand, CATEGORIES, NO_FAULT};
use crate::error::{Error, Result};
use crate::gas_turbine::{self, Component, FaultScenario};
use crate::rng::{run_seed, stream, streams};

/// Offset separating calibration seeds from mixed-run seeds.
const CALIBRATION_OFFSET: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub id: String,
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

/// Median and 10–90% band of every MAE% cell over the successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeSummary {
    pub median: Vec<MaeTable>,
    pub q10: Vec<MaeTable>,
    pub q90: Vec<MaeTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub estimator: String,
    pub base_seed: u64,
    pub run_ids: Vec<String>,
    pub failures: Vec<RunFailure>,
    pub mae: MaeSummary,
    pub domain_violations: usize,
    pub particle_steps: usize,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn failure(id: &str, seed: u64, e: &Error) -> RunFailure {
    RunFailure {
        id: id.to_string(),
        seed,
        kind: e.kind().to_string(),
        message: e.to_string(),
    }
}

/// Cell-wise median and quantiles. Runs lacking a cell are skipped for it.
pub fn aggregate_mae(reports: &[&RunReport]) -> MaeSummary {
    let mut median = Vec::new();
    let mut q10 = Vec::new();
    let mut q90 = Vec::new();
    let Some(first) = reports.first() else {
        return MaeSummary { median, q10, q90 };
    };
    for (g, table) in first.mae.iter().enumerate() {
        let n_phases = reports.iter().filter_map(|r| r.mae.get(g)).map(|t| t.phases.len()).max().unwrap_or(0);
        let phases = phase_names(n_phases);
        let mut tm = MaeTable::new(&table.group, phases.clone());
        let mut tl = MaeTable::new(&table.group, phases.clone());
        let mut th = MaeTable::new(&table.group, phases);
        for (s, row) in table.rows.iter().enumerate() {
            let (mut vm, mut vl, mut vh) = (Vec::new(), Vec::new(), Vec::new());
            for p in 0..n_phases {
                let mut cell: Vec<f64> = reports
                    .iter()
                    .filter_map(|r| r.mae.get(g)?.rows.get(s)?.values.get(p).copied().flatten())
                    .collect();
                cell.sort_by(f64::total_cmp);
                let q = |q: f64| (!cell.is_empty()).then(|| diagnosis::quantile(&cell, q));
                vm.push(q(0.5));
                vl.push(q(0.1));
                vh.push(q(0.9));
            }
            tm.push(row.signal.clone(), vm);
            tl.push(row.signal.clone(), vl);
            th.push(row.signal.clone(), vh);
        }
        median.push(tm);
        q10.push(tl);
        q90.push(th);
    }
    MaeSummary { median, q10, q90 }
}

/// `n_runs` independent runs of `run` seeded from `base_seed`.
pub fn monte_carlo(run: &RunConfig, n_runs: usize, base_seed: u64, workers: usize) -> Result<(MonteCarloReport, Vec<Option<RunReport>>)> {
    if n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    let scenario = run.scenario.resolve()?;
    let setup = scenario::build(run, &scenario)?;
    let kind = run.estimator;
    let results: Vec<(String, u64, Result<RunReport>)> = pool(workers)?.install(|| {
        (0..n_runs)
            .into_par_iter()
            .map(|i| {
                let seed = run_seed(base_seed, i as u64);
                let id = format!("{}/{:03}", kind.name(), i);
                let r = scenario::execute(run, kind, &setup, seed).and_then(|o| scenario::report(run, kind, &setup, &o, seed, None));
                (id, seed, r)
            })
            .collect()
    });
    let mut failures = Vec::new();
    let mut reports = Vec::new();
    let mut ids = Vec::new();
    for (id, seed, r) in results {
        match r {
            Ok(r) => reports.push(Some(r)),
            Err(e) => {
                failures.push(failure(&id, seed, &e));
                reports.push(None);
            }
        }
        ids.push(id);
    }
    let ok: Vec<&RunReport> = reports.iter().flatten().collect();
    let rep = MonteCarloReport {
        estimator: kind.name().into(),
        base_seed,
        run_ids: ids,
        failures,
        mae: aggregate_mae(&ok),
        domain_violations: ok.iter().map(|r| r.domain_violations).sum(),
        particle_steps: ok.iter().map(|r| r.particle_steps).sum(),
    };
    Ok((rep, reports))
}

/// One mixed-design run as seen by the confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub seed: u64,
    pub actual: String,
    /// `None` when the run failed.
    pub decided: Option<String>,
    pub t_detect: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub estimator: String,
    pub particles: usize,
    pub band: ThresholdBand,
    pub confusion: ConfusionMatrix,
    pub metrics: ConfusionMetrics,
    pub runs: Vec<RunSummary>,
    pub failures: Vec<RunFailure>,
    pub mae: MaeSummary,
    pub domain_violations: usize,
    pub particle_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub resamples: usize,
    /// P(AC_dual ≥ AC_rml ≥ AC_bayesian).
    pub p_accuracy_order: Option<f64>,
    /// P(FP_dual ≤ FP_rml).
    pub p_false_positive_order: Option<f64>,
    pub p_dual_ge_rml: Option<f64>,
    pub p_rml_ge_bayesian: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub base_seed: u64,
    pub design: CampaignConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub complexity: Option<ComplexityReport>,
    pub methods: Vec<MethodReport>,
    pub bootstrap: BootstrapReport,
}

impl CampaignReport {
    pub fn method(&self, kind: EstimatorKind) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.estimator == kind.name())
    }
}

/// Scenario for category `c` (a single component loss, or none).
pub fn category_scenario(c: usize, campaign: &CampaignConfig) -> FaultScenario {
    if c == NO_FAULT {
        FaultScenario::healthy()
    } else {
        FaultScenario::single(Component::from_index(c).expect("category index"), campaign.fault_time, campaign.magnitude)
    }
}

fn complexity(run: &RunConfig) -> Result<Option<ComplexityReport>> {
    let Budget::Matched { c1, c2, c3 } = run.budget else {
        return Ok(None);
    };
    let dims = match run.model {
        ModelConfig::GasTurbine { .. } => (gas_turbine::N_X, gas_turbine::N_THETA, gas_turbine::N_Y),
        ModelConfig::Synthetic { .. } => (4, 4, 5),
    };
    let cost = CostModel::new(dims.0, dims.1, dims.2, [c1, c2, c3], run.dual.param.n_particles as f64);
    Ok(Some(ComplexityReport::matched(&cost)?))
}

type RunResult = (String, u64, usize, Result<(RunReport, scenario::RunOutcome)>);

fn execute_all(run: &RunConfig, kind: EstimatorKind, jobs: &[(String, u64, usize, FaultScenario)], band: Option<&ThresholdBand>) -> Vec<RunResult> {
    jobs.par_iter()
        .map(|(id, seed, cat, sc)| {
            let r = scenario::build(run, sc).and_then(|setup| {
                let o = scenario::execute(run, kind, &setup, *seed)?;
                let rep = scenario::report(run, kind, &setup, &o, *seed, band)?;
                Ok((rep, o))
            });
            (id.clone(), *seed, *cat, r)
        })
        .collect()
}

fn run_method(run: &RunConfig, campaign: &CampaignConfig, kind: EstimatorKind, base_seed: u64, out: Option<&Path>) -> Result<MethodReport> {
    let name = kind.name();
    // calibration on healthy runs
    let healthy = FaultScenario::healthy();
    let cal_jobs: Vec<_> = (0..campaign.calibration_runs)
        .map(|i| (format!("{name}/calibration/{i:03}"), run_seed(base_seed, CALIBRATION_OFFSET + i as u64), NO_FAULT, healthy.clone()))
        .collect();
    let mut failures = Vec::new();
    let mut residuals = Vec::new();
    let mut domain_violations = 0;
    let mut particle_steps = 0;
    for (id, seed, _, r) in execute_all(run, kind, &cal_jobs, None) {
        match r.and_then(|(rep, o)| Ok((rep, scenario::residuals(run, &o.estimates)?.1))) {
            Ok((rep, res)) => {
                domain_violations += rep.domain_violations;
                particle_steps += rep.particle_steps;
                residuals.push(res);
            }
            Err(e) => failures.push(failure(&id, seed, &e)),
        }
    }
    let band = diagnosis::calibrate_thresholds(&residuals, &run.diagnosis.threshold)?;

    let mut jobs = Vec::new();
    for c in 0..CATEGORIES.len() {
        for i in 0..campaign.runs_per_category {
            let idx = (c * campaign.runs_per_category + i) as u64;
            jobs.push((format!("{name}/{}/{i:03}", CATEGORIES[c]), run_seed(base_seed, idx), c, category_scenario(c, campaign)));
        }
    }
    let mut confusion = ConfusionMatrix::default();
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for (id, seed, cat, r) in execute_all(run, kind, &jobs, Some(&band)) {
        match r {
            Ok((rep, outcome)) => {
                let decided = diagnosis::classify(rep.decisions.as_deref().unwrap_or_default());
                confusion.record(cat, decided);
                let t_detect = rep
                    .decisions
                    .as_ref()
                    .and_then(|d| d.iter().filter_map(|d| d.t_confirmed).min());
                domain_violations += rep.domain_violations;
                particle_steps += rep.particle_steps;
                if let (true, Some(dir)) = (campaign.write_runs, out) {
                    scenario::write_run(&dir.join("runs").join(&id), &rep, &outcome)?;
                }
                runs.push(RunSummary {
                    id,
                    seed,
                    actual: CATEGORIES[cat].into(),
                    decided: Some(CATEGORIES[decided].into()),
                    t_detect,
                });
                reports.push(rep);
            }
            Err(e) => {
                failures.push(failure(&id, seed, &e));
                runs.push(RunSummary {
                    id,
                    seed,
                    actual: CATEGORIES[cat].into(),
                    decided: None,
                    t_detect: None,
                });
            }
        }
    }
    let (_, nb, nm) = scenario::particle_counts(run)?;
    let refs: Vec<&RunReport> = reports.iter().collect();
    Ok(MethodReport {
        estimator: name.into(),
        particles: match kind {
            EstimatorKind::Dual => run.dual.param.n_particles,
            EstimatorKind::Bayesian => nb,
            EstimatorKind::Rml => nm,
        },
        band,
        metrics: diagnosis::confusion_metrics(&confusion)?,
        confusion,
        runs,
        failures,
        mae: aggregate_mae(&refs),
        domain_violations,
        particle_steps,
    })
}

fn category_index(name: &str) -> usize {
    CATEGORIES.iter().position(|c| *c == name).unwrap_or(NO_FAULT)
}

/// Accuracy and false-positive rate of the runs at `picks`; failed runs are
/// left out.
fn rates(runs: &[RunSummary], picks: &[usize]) -> (f64, f64) {
    let mut m = ConfusionMatrix::default();
    for &i in picks {
        if let Some(d) = &runs[i].decided {
            m.record(category_index(&runs[i].actual), category_index(d));
        }
    }
    match diagnosis::confusion_metrics(&m) {
        Ok(x) => (x.accuracy, x.false_positive.unwrap_or(f64::NAN)),
        Err(_) => (f64::NAN, f64::NAN),
    }
}

/// Stratified paired bootstrap: runs are resampled within each category and
/// the same indices are used for every method (seeds are shared).
pub fn bootstrap(methods: &[MethodReport], resamples: usize, seed: u64) -> BootstrapReport {
    let find = |k: EstimatorKind| methods.iter().find(|m| m.estimator == k.name());
    let (d, r, b) = (find(EstimatorKind::Dual), find(EstimatorKind::Rml), find(EstimatorKind::Bayesian));
    let mut out = BootstrapReport {
        resamples,
        p_accuracy_order: None,
        p_false_positive_order: None,
        p_dual_ge_rml: None,
        p_rml_ge_bayesian: None,
    };
    let Some(reference) = methods.first() else {
        return out;
    };
    if resamples == 0 {
        return out;
    }
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); CATEGORIES.len()];
    for (i, run) in reference.runs.iter().enumerate() {
        strata[category_index(&run.actual)].push(i);
    }
    let mut rng = stream(seed, streams::BOOTSTRAP);
    let (mut order, mut fp, mut dr, mut rb) = (0usize, 0usize, 0usize, 0usize);
    let mut picks = Vec::with_capacity(reference.runs.len());
    for _ in 0..resamples {
        picks.clear();
        for s in &strata {
            for _ in 0..s.len() {
                picks.push(s[rng.random_range(0..s.len())]);
            }
        }
        let ac = |m: Option<&MethodReport>| m.map(|m| rates(&m.runs, &picks));
        let (ad, ar, ab) = (ac(d), ac(r), ac(b));
        if let (Some(ad), Some(ar)) = (ad, ar) {
            dr += (ad.0 >= ar.0) as usize;
            fp += (ad.1 <= ar.1) as usize;
            if let Some(ab) = ab {
                order += (ad.0 >= ar.0 && ar.0 >= ab.0) as usize;
            }
        }
        if let (Some(ar), Some(ab)) = (ar, ab) {
            rb += (ar.0 >= ab.0) as usize;
        }
    }
    let p = |c: usize| c as f64 / resamples as f64;
    if d.is_some() && r.is_some() {
        out.p_dual_ge_rml = Some(p(dr));
        out.p_false_positive_order = Some(p(fp));
        if b.is_some() {
            out.p_accuracy_order = Some(p(order));
        }
    }
    if r.is_some() && b.is_some() {
        out.p_rml_ge_bayesian = Some(p(rb));
    }
    out
}

/// Calibrate, run the mixed-fault design for each method and bootstrap the
/// comparison. Writes per-run directories under `out` when requested.
pub fn run_campaign(run: &RunConfig, campaign: &CampaignConfig, base_seed: u64, out: Option<&Path>) -> Result<CampaignReport> {
    run.validate()?;
    if campaign.runs_per_category == 0 || campaign.methods.is_empty() {
        return Err(Error::Config("campaign needs at least one run per category and one method".into()));
    }
    let methods = pool(campaign.workers)?.install(|| {
        campaign
            .methods
            .iter()
            .map(|k| run_method(run, campaign, *k, base_seed, out))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(CampaignReport {
        base_seed,
        design: campaign.clone(),
        complexity: complexity(run)?,
        bootstrap: bootstrap(&methods, campaign.bootstrap, base_seed),
        methods,
    })
}

/// `aggregate.json`, `confusion.csv` (first method), `confusion_<method>.csv`
/// and `tables/<method>_<group>.{csv,txt}` with median MAE%.
pub fn write_campaign(dir: &Path, rep: &CampaignReport) -> Result<()> {
    fs::create_dir_all(dir.join("tables"))?;
    fs::write(dir.join("aggregate.json"), serde_json::to_string_pretty(rep)? + "\n")?;
    for (i, m) in rep.methods.iter().enumerate() {
        let mut buf = Vec::new();
        m.confusion.write_csv(&mut buf)?;
        fs::write(dir.join(format!("confusion_{}.csv", m.estimator)), &buf)?;
        if i == 0 {
            fs::write(dir.join("confusion.csv"), &buf)?;
        }
        write_mae(&dir.join("tables"), &m.estimator, &m.mae)?;
    }
    Ok(())
}

pub fn write_mae(dir: &Path, prefix: &str, mae: &MaeSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in &mae.median {
        fs::write(dir.join(format!("{prefix}_{}.csv", t.group)), t.to_csv()?)?;
        fs::write(dir.join(format!("{prefix}_{}.txt", t.group)), t.to_text())?;
    }
    Ok(())
}

/// Pooled healthy-run residuals for threshold calibration.
pub fn calibration_residuals(run: &RunConfig, n_runs: usize, base_seed: u64, workers: usize) -> Result<(Vec<Vec<DVector<f64>>>, Vec<RunFailure>)> {
    let healthy = FaultScenario::healthy();
    let kind = run.estimator;
    let jobs: Vec<_> = (0..n_runs)
        .map(|i| (format!("{}/calibration/{i:03}", kind.name()), run_seed(base_seed, CALIBRATION_OFFSET + i as u64), NO_FAULT, healthy.clone()))
        .collect();
    let results = pool(workers)?.install(|| execute_all(run, kind, &jobs, None));
    let mut res = Vec::new();
    let mut failures = Vec::new();
    for (id, seed, _, r) in results {
        match r.and_then(|(_, o)| Ok(scenario::residuals(run, &o.estimates)?.1)) {
            Ok(r) => res.push(r),
            Err(e) => failures.push(failure(&id, seed, &e)),
        }
    }
    Ok((res, failures))
}
