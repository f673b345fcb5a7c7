//! Small synthetic plants used for desk-scale checks and campaigns.
//!
//! [`FourComponent`] mirrors the structure of the engine's health vector: two
//! parameters scale flows in the transition (`θ₂`, `θ₄`) and two scale
//! measured quantities (`θ₁`, `θ₃`), with `n_x = 4`, `n_θ = 4`, `n_y = 5`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Dims, Dynamics, FnDynamics, ModelSpec, ParamDomain};

/// ```text
/// x1' = a x1 + (1-a) θ2 u_t        + w1
/// x2' = a x2 + (1-a) θ4 x1         + w2
/// x3' = a x3 + (1-a) x1            + w3
/// x4' = a x4 + (1-a) x2            + w4
/// y   = [θ1 x3, x1, x2, θ3 x4, x3 + x4] + v
/// ```
/// The input `u_t` steps by `input_step` at `input_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FourComponent {
    pub pole: f64,
    pub input: f64,
    pub input_step: f64,
    pub input_time: usize,
}

impl Default for FourComponent {
    fn default() -> Self {
        Self {
            pole: 0.8,
            input: 1.0,
            input_step: -0.02,
            input_time: 100,
        }
    }
}

impl FourComponent {
    pub fn input_at(&self, t: usize) -> f64 {
        if t >= self.input_time {
            self.input * (1.0 + self.input_step)
        } else {
            self.input
        }
    }

    /// Noise-free equilibrium for the healthy parameter and initial input.
    pub fn equilibrium(&self) -> DVector<f64> {
        let x1 = self.input;
        DVector::from_vec(vec![x1, x1, x1, x1])
    }
}

impl Dynamics for FourComponent {
    fn transition(&self, t: usize, x: &DVector<f64>, th: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let a = self.pole;
        let b = 1.0 - a;
        DVector::from_vec(vec![
            a * x[0] + b * th[1] * self.input_at(t) + w[0],
            a * x[1] + b * th[3] * x[0] + w[1],
            a * x[2] + b * x[0] + w[2],
            a * x[3] + b * x[1] + w[3],
        ])
    }

    fn output(&self, _t: usize, x: &DVector<f64>, th: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![th[0] * x[2], x[0], x[1], th[2] * x[3], x[2] + x[3]])
    }

    fn output_jacobian(&self, _t: usize, x: &DVector<f64>, _th: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut j = DMatrix::zeros(5, 4);
        j[(0, 0)] = x[2];
        j[(3, 2)] = x[3];
        Some(j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticNoise {
    pub process_var: f64,
    pub measurement_var: f64,
}

impl Default for SyntheticNoise {
    fn default() -> Self {
        Self {
            process_var: 1e-4,
            measurement_var: 1e-4,
        }
    }
}

pub fn four_component(plant: FourComponent, noise: &SyntheticNoise) -> Result<ModelSpec> {
    ModelSpec::new(
        Dims {
            n_x: 4,
            n_theta: 4,
            n_y: 5,
        },
        Arc::new(plant),
        DMatrix::identity(4, 4) * noise.process_var,
        DMatrix::identity(5, 5) * noise.measurement_var,
        ParamDomain::uniform(4, 0.5, 1.2)?,
    )
}

/// `x' = θ x + w`, `y = x + v` on the domain `[lower, upper]`.
pub fn scalar_ar(process_var: f64, measurement_var: f64, lower: f64, upper: f64) -> Result<ModelSpec> {
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
        DMatrix::from_element(1, 1, process_var),
        DMatrix::from_element(1, 1, measurement_var),
        ParamDomain::uniform(1, lower, upper)?,
    )
}
