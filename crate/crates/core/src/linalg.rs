//! Small dense linear-algebra helpers shared by the filters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this (relative to the largest) are treated as zero.
pub const PSD_CLAMP: f64 = 1e-10;

/// Eigenvalues below `-NEGATIVE_TOLERANCE` reject a covariance outright.
pub const NEGATIVE_TOLERANCE: f64 = 1e-8;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric PSD matrix with tiny negative
/// eigenvalues clamped to zero.
#[derive(Debug, Clone)]
pub struct PsdEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl PsdEigen {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::Dimension {
                what: "covariance columns",
                expected: cov.nrows(),
                got: cov.ncols(),
            });
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Covariance {
                min_eigenvalue: f64::NAN,
            });
        }
        let eig = SymmetricEigen::new(symmetrize(cov));
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -NEGATIVE_TOLERANCE * max.max(1.0) {
            return Err(Error::Covariance { min_eigenvalue: min });
        }
        let floor = PSD_CLAMP * max.max(1e-300);
        let values = eig.eigenvalues.map(|v| if v <= floor { 0.0 } else { v });
        Ok(Self {
            values,
            vectors: eig.eigenvectors,
        })
    }

    /// `F` with `F Fᵀ = cov`.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        let scales = self.values.map(f64::sqrt);
        &self.vectors * DMatrix::from_diagonal(&scales)
    }

    pub fn min(&self) -> f64 {
        self.values.min()
    }

    pub fn max(&self) -> f64 {
        self.values.max()
    }
}

/// Factor `F` with `F Fᵀ = cov`, via symmetric eigendecomposition so that
/// semidefinite matrices are accepted.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(PsdEigen::new(cov)?.sqrt_factor())
}

pub fn mean(points: &[DVector<f64>]) -> DVector<f64> {
    assert!(!points.is_empty(), "mean of an empty point set");
    let mut acc = DVector::zeros(points[0].len());
    for p in points {
        acc += p;
    }
    acc / points.len() as f64
}

pub fn weighted_mean(points: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    assert!(!points.is_empty(), "mean of an empty point set");
    let mut acc = DVector::zeros(points[0].len());
    for (p, w) in points.iter().zip(weights) {
        acc.axpy(*w, p, 1.0);
    }
    acc
}

/// Normalizer for [`covariance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovNorm {
    /// Divide by `N - 1`.
    Sample,
    /// Divide by `N`.
    Population,
    /// No division: the plain sum of outer products.
    Sum,
}

pub fn covariance(points: &[DVector<f64>], norm: CovNorm) -> DMatrix<f64> {
    let n = points.len();
    let d = points.first().map_or(0, |p| p.len());
    let mut acc = DMatrix::zeros(d, d);
    if n == 0 {
        return acc;
    }
    let m = mean(points);
    for p in points {
        let c = p - &m;
        acc.ger(1.0, &c, &c, 1.0);
    }
    let div = match norm {
        CovNorm::Sample if n > 1 => (n - 1) as f64,
        CovNorm::Sample => 1.0,
        CovNorm::Population => n as f64,
        CovNorm::Sum => 1.0,
    };
    acc / div
}

/// Gaussian log-density evaluator with a cached inverse and log-determinant.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    inverse: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    /// Requires a strictly positive definite covariance.
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(symmetrize(cov)).ok_or_else(|| {
            let min = SymmetricEigen::new(symmetrize(cov)).eigenvalues.min();
            Error::Covariance {
                min_eigenvalue: min,
            }
        })?;
        let d = cov.nrows() as f64;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        Ok(Self {
            inverse: chol.inverse(),
            log_norm: -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    pub fn log_density(&self, residual: &DVector<f64>) -> f64 {
        self.log_norm - 0.5 * residual.dot(&(&self.inverse * residual))
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }
}
