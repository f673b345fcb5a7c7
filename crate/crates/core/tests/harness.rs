use dualsmc::diagnosis::{calibrate_thresholds, ThresholdBand, NO_FAULT};
use dualsmc::harness::campaign::{calibration_residuals, monte_carlo, run_campaign};
use dualsmc::harness::config::ScenarioConfig;
use dualsmc::harness::{run_scenario, Config, EstimatorKind, RunConfig};
use dualsmc::rng::run_seed;
use dualsmc::Error;

fn synthetic() -> Config {
    Config::synthetic_campaign()
}

fn band(run: &RunConfig, seed: u64) -> ThresholdBand {
    let (res, failures) = calibration_residuals(run, 25, seed, 1).unwrap();
    assert!(failures.is_empty(), "{failures:?}");
    calibrate_thresholds(&res, &run.diagnosis.threshold).unwrap()
}

#[test]
fn single_run_monte_carlo_matches_direct_run() {
    let mut run = synthetic().run;
    run.scenario = ScenarioConfig::Preset("scenario_I_concurrent".into());
    let (mc, reports) = monte_carlo(&run, 1, 42, 1).unwrap();
    assert!(mc.failures.is_empty());
    run.seed = run_seed(42, 0);
    let (direct, _) = run_scenario(&run, None).unwrap();
    assert_eq!(reports[0].as_ref().unwrap(), &direct);
}

#[test]
fn worker_count_does_not_change_results() {
    let mut run = synthetic().run;
    run.estimator = EstimatorKind::Rml;
    let (a, ra) = monte_carlo(&run, 4, 9, 1).unwrap();
    let (b, rb) = monte_carlo(&run, 4, 9, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert!(monte_carlo(&run, 0, 9, 1).is_err());
}

#[test]
fn zero_duration_is_a_config_error() {
    let mut run = synthetic().run;
    run.duration = 0.0;
    assert!(matches!(run.validate(), Err(Error::Config(_))));
    assert!(matches!(run_scenario(&run, None), Err(Error::Config(_))));
}

#[test]
fn campaign_confusion_follows_the_design() {
    let mut cfg = synthetic();
    cfg.campaign.runs_per_category = 2;
    cfg.campaign.methods = vec![EstimatorKind::Dual, EstimatorKind::Rml];
    cfg.campaign.bootstrap = 50;
    let rep = run_campaign(&cfg.run, &cfg.campaign, 5, None).unwrap();
    assert_eq!(rep.methods.len(), 2);
    for m in &rep.methods {
        for i in 0..5 {
            assert_eq!(m.confusion.row_sum(i), 2, "{}: row {i}", m.estimator);
        }
        assert_eq!(m.runs.len(), 10);
        assert_eq!(m.domain_violations, 0);
    }
    assert!(rep.bootstrap.p_false_positive_order.is_some());
}

/// Fresh healthy runs against a band calibrated on other healthy runs.
#[test]
fn healthy_engine_runs_rarely_alarm() {
    let mut run = Config::paper_defaults().run;
    run.scenario = ScenarioConfig::Preset("healthy".into());
    let band = band(&run, 0);
    let mut alarms = 0;
    for i in 0..25 {
        run.seed = run_seed(77, i);
        let (rep, _) = run_scenario(&run, Some(&band)).unwrap();
        if rep.decided_category.as_deref() != Some(dualsmc::diagnosis::CATEGORIES[NO_FAULT]) {
            alarms += 1;
        }
    }
    assert!(alarms <= 2, "{alarms}/25 healthy runs raised a fault");
}

/// The engine's concurrent faults are detected in injection order.
#[test]
fn concurrent_engine_faults_detected_in_order() {
    let mut run = Config::paper_defaults().run;
    run.seed = 1;
    let band = band(&run, 1);
    let (rep, _) = run_scenario(&run, Some(&band)).unwrap();
    let decisions = rep.decisions.unwrap();
    let onsets: Vec<usize> = decisions.iter().map(|d| d.t_detect.expect("every fault detected")).collect();
    assert!(onsets.windows(2).all(|w| w[0] < w[1]), "{onsets:?}");
    assert_eq!(rep.decided_category.as_deref(), Some("eta_C"));
}

#[test]
fn run_directory_layout() {
    let run = synthetic().run;
    let (rep, outcome) = run_scenario(&run, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    dualsmc::harness::scenario::write_run(dir.path(), &rep, &outcome).unwrap();
    for f in ["trajectory.csv", "residuals.csv", "report.json", "timing.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), rep.steps + 1);
    let back: dualsmc::harness::scenario::RunReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back, rep);
}
