//! Residual-based fault detection, isolation and identification.
//!
//! A healthy baseline `θ̂₀` is fitted to parameter estimates from a window of
//! healthy operation; residuals `r_t = θ̂₀ − θ̂_t` are compared against bands
//! calibrated from healthy Monte-Carlo runs. Positive residuals indicate
//! loss of effectiveness.

use std::ops::Range;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CovNorm};

/// Default convergence horizon in steps (2 s at 10 ms).
pub const DEFAULT_HORIZON: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthyBaseline {
    pub theta0: Vec<f64>,
    pub window: usize,
    pub fit_cov: Vec<Vec<f64>>,
    /// The window was shorter than the configured convergence horizon.
    pub short_window: bool,
}

/// Fit a Gaussian to the windowed estimates; its mode (the sample mean) is
/// the healthy baseline.
pub fn fit_healthy_baseline(estimates: &[DVector<f64>], horizon: usize) -> Result<HealthyBaseline> {
    if estimates.len() < 2 {
        return Err(Error::Calibration {
            needed: 2,
            got: estimates.len(),
        });
    }
    let short_window = estimates.len() < horizon;
    if short_window {
        log::warn!("baseline window of {} steps is shorter than the horizon {horizon}", estimates.len());
    }
    let mean = linalg::mean(estimates);
    let cov = linalg::covariance(estimates, CovNorm::Sample);
    Ok(HealthyBaseline {
        theta0: mean.iter().copied().collect(),
        window: estimates.len(),
        fit_cov: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        short_window,
    })
}

impl HealthyBaseline {
    pub fn from_theta(theta0: &[f64]) -> Self {
        Self {
            theta0: theta0.to_vec(),
            window: 0,
            fit_cov: vec![vec![0.0; theta0.len()]; theta0.len()],
            short_window: false,
        }
    }

    pub fn theta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta0)
    }
}

/// `r_t = θ̂₀ − θ̂_t`.
pub fn residual(baseline: &HealthyBaseline, theta_hat: &DVector<f64>) -> Result<DVector<f64>> {
    if theta_hat.len() != baseline.theta0.len() {
        return Err(Error::Dimension {
            what: "residual",
            expected: baseline.theta0.len(),
            got: theta_hat.len(),
        });
    }
    Ok(baseline.theta() - theta_hat)
}

pub fn residual_series(baseline: &HealthyBaseline, estimates: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    estimates.iter().map(|e| residual(baseline, e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBand {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ThresholdBand {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                what: "threshold band",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config("threshold band needs lower < upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(half_width: &[f64]) -> Result<Self> {
        Self::new(half_width.iter().map(|h| -h).collect(), half_width.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, k: usize, r: f64) -> bool {
        r >= self.lower[k] && r <= self.upper[k]
    }

    /// Band scaled about its centre.
    pub fn widened(&self, factor: f64) -> Self {
        let (lower, upper) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| {
                let c = 0.5 * (l + u);
                let h = 0.5 * (u - l) * factor;
                (c - h, c + h)
            })
            .unzip();
        Self { lower, upper }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    /// Two-sided coverage of the healthy residual distribution.
    pub coverage: f64,
    /// Minimum half-width of each band.
    pub min_width: f64,
    /// Leading steps of each run excluded as transient.
    pub skip: usize,
    pub min_runs: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            coverage: 0.99,
            min_width: 1e-3,
            skip: DEFAULT_HORIZON,
            min_runs: 25,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-component empirical quantile envelope of healthy residuals, pooled
/// over runs and post-transient steps.
pub fn calibrate_thresholds(runs: &[Vec<DVector<f64>>], config: &ThresholdConfig) -> Result<ThresholdBand> {
    if runs.len() < config.min_runs {
        return Err(Error::Calibration {
            needed: config.min_runs,
            got: runs.len(),
        });
    }
    if !(config.coverage > 0.0 && config.coverage < 1.0) || !(config.min_width > 0.0) {
        return Err(Error::Config("coverage must lie in (0, 1) and min_width be positive".into()));
    }
    let dim = runs
        .iter()
        .flat_map(|r| r.iter())
        .map(|v| v.len())
        .next()
        .ok_or_else(|| Error::Config("no residual samples".into()))?;
    let mut lower = Vec::with_capacity(dim);
    let mut upper = Vec::with_capacity(dim);
    for k in 0..dim {
        let mut pooled: Vec<f64> = runs
            .iter()
            .flat_map(|r| r.iter().skip(config.skip))
            .map(|v| v[k])
            .filter(|v| v.is_finite())
            .collect();
        if pooled.is_empty() {
            return Err(Error::Config(format!("no healthy residual samples after skipping {} steps", config.skip)));
        }
        pooled.sort_by(f64::total_cmp);
        let tail = 0.5 * (1.0 - config.coverage);
        let lo = quantile(&pooled, tail);
        let hi = quantile(&pooled, 1.0 - tail);
        let c = 0.5 * (lo + hi);
        lower.push(lo.min(c - config.min_width));
        upper.push(hi.max(c + config.min_width));
    }
    ThresholdBand::new(lower, upper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionConfig {
    /// Consecutive out-of-band steps required to flag a component.
    pub persistence: usize,
    /// Trailing window (steps) for the severity estimate.
    pub severity_window: usize,
    /// Steps before which residuals are not examined.
    pub start: usize,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            persistence: 5,
            severity_window: 100,
            start: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDecision {
    pub component: usize,
    pub detected: bool,
    /// First step of the violating run.
    pub t_detect: Option<usize>,
    /// Step at which the persistence requirement was met.
    pub t_confirmed: Option<usize>,
    /// Mean residual over the trailing window after detection.
    pub severity: Option<f64>,
}

/// Per-component detection with persistence. Index `i` of `residuals` is
/// step `i`.
pub fn decide(residuals: &[DVector<f64>], band: &ThresholdBand, config: &DecisionConfig) -> Result<Vec<ComponentDecision>> {
    if config.persistence == 0 {
        return Err(Error::Config("persistence must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(band.dim());
    for k in 0..band.dim() {
        let mut run = 0;
        let mut hit = None;
        for (t, r) in residuals.iter().enumerate().skip(config.start) {
            if band.contains(k, r[k]) {
                run = 0;
                continue;
            }
            run += 1;
            if run == config.persistence {
                hit = Some((t + 1 - run, t));
                break;
            }
        }
        let decision = match hit {
            None => ComponentDecision {
                component: k,
                detected: false,
                t_detect: None,
                t_confirmed: None,
                severity: None,
            },
            Some((onset, confirmed)) => {
                let from = onset.max(residuals.len().saturating_sub(config.severity_window.max(1)));
                let tail = &residuals[from..];
                let severity = tail.iter().map(|r| r[k]).sum::<f64>() / tail.len() as f64;
                ComponentDecision {
                    component: k,
                    detected: true,
                    t_detect: Some(onset),
                    t_confirmed: Some(confirmed),
                    severity: Some(severity),
                }
            }
        };
        out.push(decision);
    }
    Ok(out)
}

/// Fault categories in confusion-matrix order; the last one is no fault.
pub const CATEGORIES: [&str; 5] = ["eta_C", "m_C", "eta_T", "m_T", "no_fault"];
pub const NO_FAULT: usize = 4;

/// One decided category per run: the component confirmed first (ties go to
/// the larger severity), or no fault.
pub fn classify(decisions: &[ComponentDecision]) -> usize {
    decisions
        .iter()
        .filter(|d| d.detected)
        .min_by(|a, b| {
            a.t_confirmed.cmp(&b.t_confirmed).then_with(|| {
                let sa = a.severity.unwrap_or(0.0).abs();
                let sb = b.severity.unwrap_or(0.0).abs();
                sb.total_cmp(&sa)
            })
        })
        .map_or(NO_FAULT, |d| d.component)
}

/// Rows are the actual category, columns the decided one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 5]; 5],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 5]; 5]) -> Self {
        Self { counts }
    }

    pub fn record(&mut self, actual: usize, decided: usize) {
        self.counts[actual][decided] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["actual"];
        header.extend(CATEGORIES);
        w.write_record(&header)?;
        for (name, row) in CATEGORIES.iter().zip(&self.counts) {
            let mut rec = vec![name.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Accuracy, per-class precision and false-positive rate, as fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    /// `None` where the decided column is empty.
    pub precision: [Option<f64>; 4],
    /// `None` when there are no fault-free runs.
    pub false_positive: Option<f64>,
}

pub fn confusion_metrics(m: &ConfusionMatrix) -> Result<ConfusionMetrics> {
    let total = m.total();
    if total == 0 {
        return Err(Error::UndefinedMetric("empty confusion matrix".into()));
    }
    let trace: u64 = (0..5).map(|i| m.counts[i][i]).sum();
    let precision = std::array::from_fn(|j| {
        let col = m.column_sum(j);
        (col > 0).then(|| m.counts[j][j] as f64 / col as f64)
    });
    let healthy = m.row_sum(NO_FAULT);
    let false_positive = (healthy > 0).then(|| m.counts[NO_FAULT][..4].iter().sum::<u64>() as f64 / healthy as f64);
    Ok(ConfusionMetrics {
        accuracy: trace as f64 / total as f64,
        precision,
        false_positive,
    })
}

/// `100 · mean |est − truth| / |nominal|` over `window`.
pub fn mae_percent(estimates: &[f64], truth: &[f64], nominal: f64, window: Range<usize>) -> Result<f64> {
    if nominal == 0.0 || !nominal.is_finite() {
        return Err(Error::UndefinedMetric("nominal value is zero".into()));
    }
    if window.is_empty() || window.end > estimates.len() || window.end > truth.len() {
        return Err(Error::UndefinedMetric(format!(
            "window {window:?} outside trajectory of length {}",
            estimates.len().min(truth.len())
        )));
    }
    let n = window.len() as f64;
    let sum: f64 = window.map(|i| (estimates[i] - truth[i]).abs()).sum();
    Ok(100.0 * sum / n / nominal.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub baseline: HealthyBaseline,
    pub band: ThresholdBand,
    pub decisions: Vec<ComponentDecision>,
    pub decided_category: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<ConfusionMetrics>,
}

impl DiagnosisReport {
    pub fn new(baseline: HealthyBaseline, band: ThresholdBand, decisions: Vec<ComponentDecision>) -> Self {
        let decided_category = CATEGORIES[classify(&decisions)].to_string();
        Self {
            baseline,
            band,
            decisions,
            decided_category,
            confusion: None,
            metrics: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
