//! Single-spool gas-turbine plant with multiplicative health parameters.
//!
//! States are `[T_CC, S, P_CC, P_NLT]` (K, rpm, Pa, Pa); outputs are
//! `[T_C, P_CC, S, P_NLT, T_T]`; the health vector is
//! `[θ_ηC, θ_mC, θ_ηT, θ_mT]`. The component flow maps are smooth algebraic
//! placeholders and the default constants describe a plausible small
//! turbojet, not any particular engine. Flow coefficients are calibrated so
//! the design point is an exact equilibrium.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dims, Dynamics, ModelSpec, ParamDomain};

pub const N_X: usize = 4;
pub const N_THETA: usize = 4;
pub const N_Y: usize = 5;
/// Sampling period in seconds.
pub const DT: f64 = 0.01;

pub const STATE_NAMES: [&str; N_X] = ["T_CC", "S", "P_CC", "P_NLT"];
pub const OUTPUT_NAMES: [&str; N_Y] = ["T_C", "P_CC", "S", "P_NLT", "T_T"];
pub const HEALTH_NAMES: [&str; N_THETA] = ["eta_C", "m_C", "eta_T", "m_T"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub t_cc: f64,
    pub s: f64,
    pub p_cc: f64,
    pub p_nlt: f64,
}

impl EngineState {
    pub fn from_vector(x: &DVector<f64>) -> Self {
        Self {
            t_cc: x[0],
            s: x[1],
            p_cc: x[2],
            p_nlt: x[3],
        }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.t_cc, self.s, self.p_cc, self.p_nlt])
    }

    fn check(&self) -> Result<()> {
        if !(self.t_cc > 0.0 && self.s > 0.0 && self.p_cc > 0.0 && self.p_nlt > 0.0) {
            return Err(Error::PhysicalDomain(format!("nonpositive engine state {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthVector {
    pub eta_c: f64,
    pub m_c: f64,
    pub eta_t: f64,
    pub m_t: f64,
}

impl Default for HealthVector {
    fn default() -> Self {
        Self::healthy()
    }
}

impl HealthVector {
    pub fn healthy() -> Self {
        Self {
            eta_c: 1.0,
            m_c: 1.0,
            eta_t: 1.0,
            m_t: 1.0,
        }
    }

    pub fn from_vector(theta: &DVector<f64>) -> Self {
        Self {
            eta_c: theta[0],
            m_c: theta[1],
            eta_t: theta[2],
            m_t: theta[3],
        }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.eta_c, self.m_c, self.eta_t, self.m_t])
    }

    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::EtaC => self.eta_c,
            Component::MC => self.m_c,
            Component::EtaT => self.eta_t,
            Component::MT => self.m_t,
        }
    }

    fn get_mut(&mut self, c: Component) -> &mut f64 {
        match c {
            Component::EtaC => &mut self.eta_c,
            Component::MC => &mut self.m_c,
            Component::EtaT => &mut self.eta_t,
            Component::MT => &mut self.m_t,
        }
    }
}

/// Design point and fixed constants. Flow coefficients and the nominal fuel
/// flow are derived by [`EngineConstants::from_design`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignPoint {
    pub c_p: f64,
    pub c_v: f64,
    pub gamma: f64,
    pub r_gas: f64,
    pub h_u: f64,
    pub eta_cc: f64,
    pub eta_mech: f64,
    pub eta_c: f64,
    pub eta_t: f64,
    /// Spool inertia, kg m².
    pub inertia: f64,
    /// Combustion-chamber volume, m³.
    pub v_cc: f64,
    /// Lumped nozzle plenum constant (volume over gas constant).
    pub v_m: f64,
    /// Combustion-chamber gas mass, kg.
    pub m_cc: f64,
    pub bypass_ratio: f64,
    pub t_diffuser: f64,
    pub p_diffuser: f64,
    pub p_ambient: f64,
    /// Compressor pressure-ratio sensitivity of the flow map.
    pub compressor_slope: f64,
    pub t_cc0: f64,
    pub p_cc0: f64,
    pub s0: f64,
    pub m_c0: f64,
}

impl Default for DesignPoint {
    fn default() -> Self {
        Self {
            c_p: 1005.0,
            c_v: 718.0,
            gamma: 1.4,
            r_gas: 287.0,
            h_u: 43.0e6,
            eta_cc: 0.98,
            eta_mech: 0.99,
            eta_c: 0.8,
            eta_t: 0.85,
            inertia: 0.05,
            v_cc: 1.0,
            v_m: 0.0045,
            m_cc: 0.5,
            bypass_ratio: 0.2,
            t_diffuser: 290.0,
            p_diffuser: 100.0e3,
            p_ambient: 80.0e3,
            compressor_slope: 1.0,
            t_cc0: 1100.0,
            p_cc0: 400.0e3,
            s0: 40000.0,
            m_c0: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConstants {
    pub design: DesignPoint,
    /// Turbine flow coefficient.
    pub k_t: f64,
    /// Nozzle flow coefficient.
    pub k_n: f64,
    /// Mixer temperature feeding the nozzle, K.
    pub t_m: f64,
    /// Nominal fuel flow, kg/s.
    pub m_f0: f64,
    pub nominal: EngineState,
}

impl Default for EngineConstants {
    fn default() -> Self {
        Self::from_design(DesignPoint::default()).expect("default design point is valid")
    }
}

impl EngineConstants {
    /// Solve the healthy design point for fuel flow, nozzle pressure and
    /// flow coefficients.
    pub fn from_design(d: DesignPoint) -> Result<Self> {
        let positive = [
            d.c_p, d.c_v, d.r_gas, d.h_u, d.eta_cc, d.eta_mech, d.eta_c, d.eta_t, d.inertia, d.v_cc, d.v_m, d.m_cc,
            d.t_diffuser, d.p_diffuser, d.p_ambient, d.t_cc0, d.p_cc0, d.s0, d.m_c0,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || !(d.gamma > 1.0) || d.bypass_ratio < 0.0 {
            return Err(Error::InvalidModel("engine constants must be positive with gamma > 1".into()));
        }
        let k = (d.gamma - 1.0) / d.gamma;
        let t_c0 = d.t_diffuser * (1.0 + ((d.p_cc0 / d.p_diffuser).powf(k) - 1.0) / d.eta_c);
        let m_f0 = d.c_p * d.m_c0 * (d.t_cc0 - t_c0) / (d.eta_cc * d.h_u - d.c_p * d.t_cc0);
        let m_t0 = d.m_c0 + m_f0;
        let t_t0 = d.t_cc0 - d.m_c0 * (t_c0 - d.t_diffuser) / (d.eta_mech * m_t0);
        let rk = 1.0 - (1.0 - t_t0 / d.t_cc0) / d.eta_t;
        if !(m_f0 > 0.0 && rk > 0.0 && rk < 1.0) {
            return Err(Error::InvalidModel("design point has no feasible equilibrium".into()));
        }
        let r0 = rk.powf(1.0 / k);
        let p_nlt0 = r0 * d.p_cc0;
        if p_nlt0 <= d.p_ambient {
            return Err(Error::InvalidModel("nozzle pressure at design point is below ambient".into()));
        }
        let k_t = m_t0 * d.t_cc0.sqrt() / (d.p_cc0 * (1.0 - r0 * r0).sqrt());
        let split = d.bypass_ratio / (d.bypass_ratio + 1.0);
        let m_n0 = m_t0 + split * d.m_c0;
        let t_m = (m_t0 * t_t0 + split * d.m_c0 * t_c0) / m_n0;
        let k_n = m_n0 * t_m.sqrt() / (p_nlt0 * (1.0 - (d.p_ambient / p_nlt0).powi(2)).sqrt());
        let nominal = EngineState {
            t_cc: d.t_cc0,
            s: d.s0,
            p_cc: d.p_cc0,
            p_nlt: p_nlt0,
        };
        Ok(Self {
            design: d,
            k_t,
            k_n,
            t_m,
            m_f0,
            nominal,
        })
    }

    fn exponent(&self) -> f64 {
        (self.design.gamma - 1.0) / self.design.gamma
    }

    /// Compressor outlet temperature `T_C`.
    pub fn compressor_temperature(&self, p_cc: f64, theta_eta_c: f64) -> f64 {
        let d = &self.design;
        d.t_diffuser * (1.0 + ((p_cc / d.p_diffuser).powf(self.exponent()) - 1.0) / (theta_eta_c * d.eta_c))
    }

    /// Turbine outlet temperature `T_T`.
    pub fn turbine_temperature(&self, t_cc: f64, p_cc: f64, p_nlt: f64, theta_eta_t: f64) -> f64 {
        t_cc * (1.0 - theta_eta_t * self.design.eta_t * (1.0 - (p_nlt / p_cc).powf(self.exponent())))
    }

    /// Healthy component flows `(ṁ_C, ṁ_T, ṁ_Nozzle)`.
    pub fn flows(&self, x: &EngineState) -> (f64, f64, f64) {
        let d = &self.design;
        let s = x.s / d.s0;
        let pi0 = d.p_cc0 / d.p_diffuser;
        let m_c = d.m_c0 * s * (1.0 - d.compressor_slope * ((x.p_cc / d.p_diffuser) / (pi0 * s * s) - 1.0));
        let r = x.p_nlt / x.p_cc;
        let m_t = self.k_t * x.p_cc / x.t_cc.sqrt() * (1.0 - r * r).max(0.0).sqrt();
        let m_n = self.k_n * x.p_nlt / self.t_m.sqrt() * (1.0 - (d.p_ambient / x.p_nlt).powi(2)).max(0.0).sqrt();
        (m_c, m_t, m_n)
    }
}

/// Time derivative of the engine state.
pub fn derivatives(x: &EngineState, h: &HealthVector, c: &EngineConstants, fuel: f64) -> Result<EngineState> {
    x.check()?;
    let d = &c.design;
    let (m_c, m_t, m_n) = c.flows(x);
    let t_c = c.compressor_temperature(x.p_cc, h.eta_c);
    let t_t = c.turbine_temperature(x.t_cc, x.p_cc, x.p_nlt, h.eta_t);
    let mc = h.m_c * m_c;
    let mt = h.m_t * m_t;
    let net = mc + fuel - mt;
    let bracket = (d.c_p * t_c * mc + d.eta_cc * d.h_u * fuel - d.c_p * x.t_cc * mt) - d.c_v * x.t_cc * net;
    let d_t_cc = bracket / (d.c_v * d.m_cc);
    let d_s = (d.eta_mech * mt * d.c_p * (x.t_cc - t_t) - mc * d.c_p * (t_c - d.t_diffuser)) / (d.inertia * x.s * (PI / 30.0).powi(2));
    let d_p_cc = x.p_cc / x.t_cc * d_t_cc + d.gamma * d.r_gas * x.t_cc / d.v_cc * net;
    let split = d.bypass_ratio / (d.bypass_ratio + 1.0);
    let d_p_nlt = c.t_m / d.v_m * (mt + split * mc - m_n);
    Ok(EngineState {
        t_cc: d_t_cc,
        s: d_s,
        p_cc: d_p_cc,
        p_nlt: d_p_nlt,
    })
}

/// Measured outputs `[T_C, P_CC, S, P_NLT, T_T]`.
pub fn outputs(x: &EngineState, h: &HealthVector, c: &EngineConstants) -> Result<DVector<f64>> {
    if !(x.p_cc > 0.0 && x.p_nlt > 0.0) {
        return Err(Error::PhysicalDomain(format!("nonpositive pressure in {x:?}")));
    }
    Ok(DVector::from_vec(vec![
        c.compressor_temperature(x.p_cc, h.eta_c),
        x.p_cc,
        x.s,
        x.p_nlt,
        c.turbine_temperature(x.t_cc, x.p_cc, x.p_nlt, h.eta_t),
    ]))
}

/// `∂y/∂θ` (`5 × 4`); only `y_1` and `y_5` depend on the health vector.
pub fn output_jacobian(x: &EngineState, h: &HealthVector, c: &EngineConstants) -> DMatrix<f64> {
    let d = &c.design;
    let k = c.exponent();
    let mut j = DMatrix::zeros(N_Y, N_THETA);
    j[(0, 0)] = -d.t_diffuser * ((x.p_cc / d.p_diffuser).powf(k) - 1.0) / (h.eta_c * h.eta_c * d.eta_c);
    j[(4, 2)] = -x.t_cc * d.eta_t * (1.0 - (x.p_nlt / x.p_cc).powf(k));
    j
}

pub const MAX_ITERATIONS: usize = 50;
pub const TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerStep {
    pub state: EngineState,
    pub iterations: usize,
    /// The implicit iteration did not converge; an explicit step was used.
    pub explicit_fallback: bool,
}

/// Backward Euler `x⁺ = x + dt f(x⁺)` by fixed-point iteration.
pub fn step_backward_euler(x: &EngineState, h: &HealthVector, c: &EngineConstants, fuel: f64, dt: f64) -> Result<EulerStep> {
    step_implicit(x, dt, |z| derivatives(z, h, c, fuel))
}

pub(crate) fn step_implicit<F>(x: &EngineState, dt: f64, f: F) -> Result<EulerStep>
where
    F: Fn(&EngineState) -> Result<EngineState>,
{
    if !(dt > 0.0) {
        return Err(Error::Config("time step must be positive".into()));
    }
    let x0 = x.to_vector();
    let explicit = x0.clone() + f(x)?.to_vector() * dt;
    let mut z = x0.clone();
    for it in 1..=MAX_ITERATIONS {
        let fz = match f(&EngineState::from_vector(&z)) {
            Ok(v) => v.to_vector(),
            Err(_) => break,
        };
        let next = &x0 + fz * dt;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                time: f64::NAN,
                reason: format!("fixed-point iterate diverged from {:?}", x),
            });
        }
        let change = next
            .iter()
            .zip(z.iter())
            .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300))
            .fold(0.0, f64::max);
        z = next;
        if change <= TOLERANCE {
            return Ok(EulerStep {
                state: EngineState::from_vector(&z),
                iterations: it,
                explicit_fallback: false,
            });
        }
    }
    log::debug!("backward Euler did not converge; explicit step used");
    if explicit.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            time: f64::NAN,
            reason: format!("explicit fallback diverged from {:?}", x),
        });
    }
    Ok(EulerStep {
        state: EngineState::from_vector(&explicit),
        iterations: MAX_ITERATIONS,
        explicit_fallback: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    EtaC,
    MC,
    EtaT,
    MT,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::EtaC, Component::MC, Component::EtaT, Component::MT];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Step,
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    /// Seconds.
    pub start: f64,
    pub component: Component,
    pub profile: Profile,
    /// Fractional loss of effectiveness.
    pub magnitude: f64,
    /// End of the ramp for drift events, seconds.
    #[serde(default)]
    pub ramp_end: Option<f64>,
}

/// Relative fuel-flow change applied from `time` onwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelStep {
    pub time: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FaultScenario {
    #[serde(default)]
    pub events: Vec<FaultEvent>,
    #[serde(default)]
    pub fuel_step: Option<FuelStep>,
}

impl FaultScenario {
    pub fn validate(&self) -> Result<()> {
        for e in &self.events {
            if !(e.start >= 0.0) || !(0.0..=0.5).contains(&e.magnitude) {
                return Err(Error::Config(format!("invalid fault event {e:?}")));
            }
            if e.profile == Profile::Drift && !matches!(e.ramp_end, Some(end) if end > e.start) {
                return Err(Error::Config(format!("drift event needs ramp_end after start: {e:?}")));
            }
        }
        Ok(())
    }

    /// Multiplicative health vector in force at time `t` seconds.
    pub fn health_at(&self, t: f64) -> HealthVector {
        let mut h = HealthVector::healthy();
        for e in &self.events {
            if t < e.start {
                continue;
            }
            let loss = match e.profile {
                Profile::Step => e.magnitude,
                Profile::Drift => {
                    let end = e.ramp_end.unwrap_or(e.start);
                    if t >= end {
                        e.magnitude
                    } else {
                        e.magnitude * (t - e.start) / (end - e.start)
                    }
                }
            };
            *h.get_mut(e.component) *= 1.0 - loss;
        }
        h
    }

    pub fn fuel_factor(&self, t: f64) -> f64 {
        match self.fuel_step {
            Some(f) if t >= f.time => 1.0 + f.fraction,
            _ => 1.0,
        }
    }

    /// Fault-free scenario with the standard fuel excitation.
    pub fn healthy() -> Self {
        Self {
            events: Vec::new(),
            fuel_step: Some(FuelStep {
                time: 1.0,
                fraction: -0.02,
            }),
        }
    }

    /// 5% step losses at 4, 9, 14 and 19 s in the order ηC, mC, ηT, mT.
    pub fn scenario_i_concurrent() -> Self {
        let mut s = Self::healthy();
        s.events = Component::ALL
            .iter()
            .zip([4.0, 9.0, 14.0, 19.0])
            .map(|(c, start)| FaultEvent {
                start,
                component: *c,
                profile: Profile::Step,
                magnitude: 0.05,
                ramp_end: None,
            })
            .collect();
        s
    }

    /// 5% drifts in all four parameters ramping from 9 s to 19 s.
    pub fn scenario_ii_simultaneous() -> Self {
        let mut s = Self::healthy();
        s.events = Component::ALL
            .iter()
            .map(|c| FaultEvent {
                start: 9.0,
                component: *c,
                profile: Profile::Drift,
                magnitude: 0.05,
                ramp_end: Some(19.0),
            })
            .collect();
        s
    }

    /// Healthy scenario plus one step loss.
    pub fn single(component: Component, start: f64, magnitude: f64) -> Self {
        let mut s = Self::healthy();
        s.events.push(FaultEvent {
            start,
            component,
            profile: Profile::Step,
            magnitude,
            ramp_end: None,
        });
        s
    }

    /// Onset times of the events, sorted.
    pub fn onsets(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.events.iter().map(|e| e.start).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "healthy" => Some(Self::healthy()),
            "scenario_I_concurrent" => Some(Self::scenario_i_concurrent()),
            "scenario_II_simultaneous" => Some(Self::scenario_ii_simultaneous()),
            _ => None,
        }
    }

    /// `θ_t` for `t = 1..=steps` sampled at `t·dt`.
    pub fn theta_trajectory(&self, steps: usize, dt: f64) -> Vec<DVector<f64>> {
        (1..=steps).map(|t| self.health_at(t as f64 * dt).to_vector()).collect()
    }
}

/// Discretized engine as a [`Dynamics`] implementation. The fuel schedule is
/// a known input.
#[derive(Debug, Clone)]
pub struct GasTurbine {
    pub constants: EngineConstants,
    pub fuel_step: Option<FuelStep>,
    pub dt: f64,
}

impl GasTurbine {
    pub fn new(constants: EngineConstants, fuel_step: Option<FuelStep>) -> Self {
        Self {
            constants,
            fuel_step,
            dt: DT,
        }
    }

    pub fn fuel_at(&self, time: f64) -> f64 {
        let factor = match self.fuel_step {
            Some(f) if time >= f.time => 1.0 + f.fraction,
            _ => 1.0,
        };
        self.constants.m_f0 * factor
    }
}

impl Dynamics for GasTurbine {
    fn transition(&self, t: usize, x: &DVector<f64>, theta: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        let h = HealthVector::from_vector(theta);
        let fuel = self.fuel_at(t as f64 * self.dt);
        match step_backward_euler(&EngineState::from_vector(x), &h, &self.constants, fuel, self.dt) {
            Ok(step) => step.state.to_vector() + noise,
            Err(_) => DVector::from_element(N_X, f64::NAN),
        }
    }

    fn output(&self, _t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        outputs(&EngineState::from_vector(x), &HealthVector::from_vector(theta), &self.constants)
            .unwrap_or_else(|_| DVector::from_element(N_Y, f64::NAN))
    }

    fn output_jacobian(&self, _t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(output_jacobian(
            &EngineState::from_vector(x),
            &HealthVector::from_vector(theta),
            &self.constants,
        ))
    }
}

/// Noise standard deviations, in state and output units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineNoise {
    pub process_std: Vec<f64>,
    pub measurement_std: Vec<f64>,
}

impl Default for EngineNoise {
    fn default() -> Self {
        Self {
            process_std: vec![0.2, 2.0, 40.0, 40.0],
            measurement_std: vec![1.0, 800.0, 40.0, 400.0, 2.0],
        }
    }
}

/// Health-parameter domain used for this plant.
pub fn health_domain() -> ParamDomain {
    ParamDomain::uniform(N_THETA, 0.5, 1.2).expect("valid bounds")
}

/// Full [`ModelSpec`] of the engine.
pub fn model(constants: EngineConstants, fuel_step: Option<FuelStep>, noise: &EngineNoise) -> Result<ModelSpec> {
    if noise.process_std.len() != N_X || noise.measurement_std.len() != N_Y {
        return Err(Error::Config("engine noise needs 4 process and 5 measurement deviations".into()));
    }
    let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_iterator(v.len(), v.iter().map(|s| s * s)));
    ModelSpec::new(
        Dims {
            n_x: N_X,
            n_theta: N_THETA,
            n_y: N_Y,
        },
        Arc::new(GasTurbine::new(constants, fuel_step)),
        diag(&noise.process_std),
        diag(&noise.measurement_std),
        health_domain(),
    )
}

/// Nominal output magnitudes, used to scale prediction errors.
pub fn nominal_outputs(c: &EngineConstants) -> Vec<f64> {
    outputs(&c.nominal, &HealthVector::healthy(), c)
        .expect("nominal state is physical")
        .iter()
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c() -> EngineConstants {
        EngineConstants::default()
    }

    #[test]
    fn design_point_is_equilibrium() {
        let c = c();
        let d = derivatives(&c.nominal, &HealthVector::healthy(), &c, c.m_f0).unwrap();
        assert!(d.t_cc.abs() < 1e-8 && d.s.abs() < 1e-6 && d.p_cc.abs() < 1e-5 && d.p_nlt.abs() < 1e-5, "{d:?}");
        let step = step_backward_euler(&c.nominal, &HealthVector::healthy(), &c, c.m_f0, DT).unwrap();
        assert!(!step.explicit_fallback);
        assert_relative_eq!(step.state.p_cc, c.nominal.p_cc, max_relative = 1e-9);
    }

    #[test]
    fn pass_through_outputs() {
        let c = c();
        let x = EngineState {
            t_cc: 1000.0,
            s: 35000.0,
            p_cc: 350e3,
            p_nlt: 150e3,
        };
        let y = outputs(&x, &HealthVector::healthy(), &c).unwrap();
        assert_eq!((y[1], y[2], y[3]), (x.p_cc, x.s, x.p_nlt));
        let same = EngineState {
            p_cc: c.design.p_diffuser,
            p_nlt: c.design.p_diffuser,
            ..x
        };
        let y = outputs(&same, &HealthVector::healthy(), &c).unwrap();
        assert_relative_eq!(y[0], c.design.t_diffuser, max_relative = 1e-12);
        assert_relative_eq!(y[4], x.t_cc, max_relative = 1e-12);
    }

    #[test]
    fn scalar_backward_euler_closed_form() {
        let lambda = 3.0;
        let x = EngineState {
            t_cc: 2.0,
            s: 1.0,
            p_cc: 1.0,
            p_nlt: 1.0,
        };
        let step = step_implicit(&x, DT, |z| {
            Ok(EngineState {
                t_cc: -lambda * z.t_cc,
                s: 0.0,
                p_cc: 0.0,
                p_nlt: 0.0,
            })
        })
        .unwrap();
        assert_relative_eq!(step.state.t_cc, 2.0 / (1.0 + lambda * DT), max_relative = 1e-12);
        assert_eq!(step.state.s, 1.0);
    }

    #[test]
    fn zero_field_leaves_state() {
        let x = c().nominal;
        let step = step_implicit(&x, DT, |_| {
            Ok(EngineState {
                t_cc: 0.0,
                s: 0.0,
                p_cc: 0.0,
                p_nlt: 0.0,
            })
        })
        .unwrap();
        assert_eq!(step.state, x);
    }

    #[test]
    fn nonpositive_state_rejected() {
        let c = c();
        let bad = EngineState { t_cc: -1.0, ..c.nominal };
        assert!(matches!(
            derivatives(&bad, &HealthVector::healthy(), &c, c.m_f0),
            Err(Error::PhysicalDomain(_))
        ));
    }

    #[test]
    fn scenario_timelines() {
        let s1 = FaultScenario::scenario_i_concurrent();
        assert_eq!(s1.health_at(2.0), HealthVector::healthy());
        let h = s1.health_at(10.0);
        assert_eq!(h.to_vector().as_slice(), &[0.95, 0.95, 1.0, 1.0]);
        let s2 = FaultScenario::scenario_ii_simultaneous();
        assert_relative_eq!(s2.health_at(14.0).eta_c, 0.975, epsilon = 1e-12);
        assert_relative_eq!(s2.health_at(30.0).m_t, 0.95, epsilon = 1e-12);
    }

    #[test]
    fn faults_move_the_engine() {
        let c = c();
        let mut h = HealthVector::healthy();
        h.eta_c = 0.95;
        let d = derivatives(&c.nominal, &h, &c, c.m_f0).unwrap();
        // a less efficient compressor absorbs more work and slows the spool
        assert!(d.s < 0.0);
    }
}
