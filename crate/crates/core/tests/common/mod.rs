#![allow(dead_code)]

use std::sync::Arc;

use dualsmc::{DMatrix, DVector, Dims, FnDynamics, ModelSpec, ParamDomain};

/// Exact Kalman filter for `x' = F x + w`, `y = H x + v`.
pub struct Kalman {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Kalman {
    pub fn predict(&mut self) {
        self.mean = &self.f * &self.mean;
        self.cov = &self.f * &self.cov * self.f.transpose() + &self.q;
    }

    pub fn update(&mut self, y: &DVector<f64>) {
        let s = &self.h * &self.cov * self.h.transpose() + &self.r;
        let k = &self.cov * self.h.transpose() * s.try_inverse().unwrap();
        self.mean = &self.mean + &k * (y - &self.h * &self.mean);
        let n = self.cov.nrows();
        self.cov = (DMatrix::identity(n, n) - &k * &self.h) * &self.cov;
    }
}

pub fn linear_model(f: DMatrix<f64>, h: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> ModelSpec {
    let n_x = f.nrows();
    let n_y = h.nrows();
    let (f2, h2) = (f.clone(), h.clone());
    ModelSpec::new(
        Dims { n_x, n_theta: 1, n_y },
        Arc::new(FnDynamics {
            transition: move |_: usize, x: &DVector<f64>, _: &DVector<f64>, w: &DVector<f64>| &f2 * x + w,
            output: move |_: usize, x: &DVector<f64>, _: &DVector<f64>| &h2 * x,
        }),
        q,
        r,
        ParamDomain::uniform(1, 0.0, 2.0).unwrap(),
    )
    .unwrap()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
