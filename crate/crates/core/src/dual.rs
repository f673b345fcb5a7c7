//! The dual estimator: a state filter and a parameter filter running side by
//! side. At step `t` the state filter uses `θ̂_{t-1|t-1}` and the parameter
//! filter uses the state filter's step-`t` output.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fmt_num, ModelSpec};
use crate::param_filter::{ParamFilter, ParamFilterConfig, PredictionMode};
use crate::rng::{self, streams, SmcRng};
use crate::state_filter::{StateFilter, StateFilterConfig};

/// Gaussian initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Prior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn diagonal(mean: &[f64], var: &[f64]) -> Self {
        Self {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::from_diagonal(&DVector::from_column_slice(var)),
        }
    }

    pub fn point(mean: &[f64]) -> Self {
        Self::diagonal(mean, &vec![0.0; mean.len()])
    }
}

/// One row of an estimation history.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub t: usize,
    pub x_hat: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub y_hat: DVector<f64>,
    pub ess_state: f64,
    pub ess_param: f64,
    /// Parameter particles outside the admissible box after this step.
    pub domain_violations: usize,
    /// Number of parameter particles checked for [`Self::domain_violations`].
    pub particles_checked: usize,
}

/// Common interface of the dual estimator and the baselines.
pub trait Estimator: Send {
    fn name(&self) -> &'static str;

    fn step(&mut self, y: &DVector<f64>) -> Result<EstimateRow>;

    fn history(&self) -> &[EstimateRow];

    /// Folds [`Estimator::step`] over the observations.
    fn run(&mut self, observations: &[DVector<f64>]) -> Result<EstimationTrajectory> {
        for y in observations {
            self.step(y)?;
        }
        Ok(EstimationTrajectory {
            rows: self.history().to_vec(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimationTrajectory {
    pub rows: Vec<EstimateRow>,
}

impl EstimationTrajectory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn theta_series(&self) -> Vec<DVector<f64>> {
        self.rows.iter().map(|r| r.theta_hat.clone()).collect()
    }

    /// CSV `t,xhat_..,thetahat_..,yhat_..,ess_state,ess_param`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let Some(first) = self.rows.first() else {
            w.write_record(["t", "ess_state", "ess_param"])?;
            w.flush()?;
            return Ok(());
        };
        let mut header = vec!["t".to_string()];
        header.extend((1..=first.x_hat.len()).map(|i| format!("xhat_{i}")));
        header.extend((1..=first.theta_hat.len()).map(|i| format!("thetahat_{i}")));
        header.extend((1..=first.y_hat.len()).map(|i| format!("yhat_{i}")));
        header.push("ess_state".into());
        header.push("ess_param".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut row = vec![r.t.to_string()];
            row.extend(r.x_hat.iter().map(|v| fmt_num(*v)));
            row.extend(r.theta_hat.iter().map(|v| fmt_num(*v)));
            row.extend(r.y_hat.iter().map(|v| fmt_num(*v)));
            row.push(fmt_num(r.ess_state));
            row.push(fmt_num(r.ess_param));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualConfig {
    pub state: StateFilterConfig,
    pub param: ParamFilterConfig,
}

pub struct DualEstimator {
    model: ModelSpec,
    state: StateFilter,
    param: ParamFilter,
    state_rng: SmcRng,
    param_rng: SmcRng,
    history: Vec<EstimateRow>,
    shrinkage_bound: Option<f64>,
}

impl DualEstimator {
    pub fn new(model: ModelSpec, x0: &Prior, theta0: &Prior, config: DualConfig, seed: u64) -> Result<Self> {
        model.require_filterable()?;
        let dims = model.dims();
        if x0.mean.len() != dims.n_x || theta0.mean.len() != dims.n_theta {
            return Err(Error::Dimension {
                what: "initial distribution",
                expected: dims.n_x + dims.n_theta,
                got: x0.mean.len() + theta0.mean.len(),
            });
        }
        if config.state.n_particles != config.param.n_particles {
            log::warn!(
                "state and parameter filters use different particle counts ({} vs {})",
                config.state.n_particles,
                config.param.n_particles
            );
        }
        let mut state_cfg = config.state;
        state_cfg.sensitivity |= config.param.prediction == PredictionMode::Predictive;
        let mut init = rng::stream(seed, streams::INIT);
        let param = ParamFilter::from_gaussian(config.param, model.param_domain().clone(), &theta0.mean, &theta0.cov, &mut init)?;
        let state = StateFilter::from_gaussian(state_cfg, &x0.mean, &x0.cov, &mut init)?;
        Ok(Self {
            model,
            state,
            param,
            state_rng: rng::stream(seed, streams::STATE_FILTER),
            param_rng: rng::stream(seed, streams::PARAM_FILTER),
            history: Vec::new(),
            shrinkage_bound: None,
        })
    }

    pub fn state_filter(&self) -> &StateFilter {
        &self.state
    }

    pub fn param_filter(&self) -> &ParamFilter {
        &self.param
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Shrinkage upper bound computed at the first step, if configured.
    pub fn shrinkage_bound(&self) -> Option<f64> {
        self.shrinkage_bound
    }
}

impl Estimator for DualEstimator {
    fn name(&self) -> &'static str {
        "dual"
    }

    fn step(&mut self, y: &DVector<f64>) -> Result<EstimateRow> {
        let theta_prev = self.param.estimate().clone();
        let s = self.state.step(&theta_prev, y, &self.model, &mut self.state_rng)?;
        if self.history.is_empty() && self.param.config().pmax.is_some() {
            match self.param.shrinkage_bound(&s.estimate, s.t, &self.model) {
                Ok(Some((a_max, _))) => {
                    if self.param.config().shrinkage > a_max {
                        log::warn!("shrinkage {} exceeds its upper bound {a_max:.4}", self.param.config().shrinkage);
                    }
                    self.shrinkage_bound = Some(a_max);
                }
                Ok(None) => {}
                Err(e) => log::warn!("shrinkage bound: {e}"),
            }
        }
        let p = self.param.step(&s, y, &self.model, &mut self.param_rng)?;
        let row = EstimateRow {
            t: s.t,
            x_hat: s.estimate,
            theta_hat: p.estimate,
            y_hat: p.output,
            ess_state: s.ess,
            ess_param: p.ess,
            domain_violations: p.domain_violations,
            particles_checked: self.param.particles().len(),
        };
        self.history.push(row.clone());
        Ok(row)
    }

    fn history(&self) -> &[EstimateRow] {
        &self.history
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, FnDynamics, ParamDomain};
    use std::sync::Arc;

    fn scalar_ar(l: f64, v: f64) -> ModelSpec {
        ModelSpec::new(
            Dims {
                n_x: 1,
                n_theta: 1,
                n_y: 1,
            },
            Arc::new(FnDynamics {
                transition: |_: usize, x: &DVector<f64>, th: &DVector<f64>, w: &DVector<f64>| x * th[0] + w,
                output: |_: usize, x: &DVector<f64>, _: &DVector<f64>| x.clone(),
            }),
            DMatrix::from_element(1, 1, l),
            DMatrix::from_element(1, 1, v),
            ParamDomain::uniform(1, 0.5, 1.2).unwrap(),
        )
        .unwrap()
    }

    fn config(n: usize) -> DualConfig {
        DualConfig {
            state: StateFilterConfig {
                n_particles: n,
                ..Default::default()
            },
            param: ParamFilterConfig {
                n_particles: n,
                evolution_var: vec![1e-4],
                ..Default::default()
            },
        }
    }

    #[test]
    fn zero_covariance_init_sits_at_means() {
        let d = DualEstimator::new(scalar_ar(1.0, 1.0), &Prior::point(&[0.3]), &Prior::point(&[0.9]), config(8), 1).unwrap();
        assert!(d.state_filter().particles().iter().all(|p| p[0] == 0.3));
        assert!(d.param_filter().particles().iter().all(|p| p[0] == 0.9));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let x0 = Prior::diagonal(&[0.0], &[1.0]);
        let th = Prior::diagonal(&[0.9], &[0.01]);
        let a = DualEstimator::new(scalar_ar(1.0, 1.0), &x0, &th, config(8), 5).unwrap();
        let b = DualEstimator::new(scalar_ar(1.0, 1.0), &x0, &th, config(8), 5).unwrap();
        assert_eq!(a.state_filter().particles(), b.state_filter().particles());
        assert_eq!(a.param_filter().particles(), b.param_filter().particles());
    }

    #[test]
    fn init_rejects_mean_outside_domain() {
        let r = DualEstimator::new(scalar_ar(1.0, 1.0), &Prior::point(&[0.0]), &Prior::point(&[2.0]), config(8), 0);
        assert!(matches!(r, Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn run_lengths_and_empty_input() {
        let mut d = DualEstimator::new(scalar_ar(1.0, 1.0), &Prior::point(&[0.0]), &Prior::point(&[0.9]), config(8), 0).unwrap();
        assert!(d.run(&[]).unwrap().is_empty());
        let ys = vec![DVector::from_element(1, 0.5); 7];
        let tr = d.run(&ys).unwrap();
        assert_eq!(tr.len(), 7);
        assert_eq!(tr.rows.last().unwrap().t, 7);
    }

    #[test]
    fn csv_header() {
        let mut d = DualEstimator::new(scalar_ar(1.0, 1.0), &Prior::point(&[0.0]), &Prior::point(&[0.9]), config(4), 0).unwrap();
        let tr = d.run(&[DVector::from_element(1, 0.1)]).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("t,xhat_1,thetahat_1,yhat_1,ess_state,ess_param"));
    }
}
