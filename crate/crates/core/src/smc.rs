//! Sequential Monte Carlo primitives: weighted ensembles, weight
//! normalization, bootstrap and residual resampling, Gaussian sampling and
//! kernel regularization on a bounded grid.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, PsdEigen};

/// Weights whose largest entry exceeds this are reported as collapsed.
pub const COLLAPSE_THRESHOLD: f64 = 1.0 - 1e-12;

/// A set of equally-dimensioned particles carrying a weight simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    particles: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(particles: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Config("an ensemble needs at least one particle".into()));
        }
        if weights.len() != particles.len() {
            return Err(Error::Dimension {
                what: "ensemble weights",
                expected: particles.len(),
                got: weights.len(),
            });
        }
        let d = particles[0].len();
        for (i, p) in particles.iter().enumerate() {
            if p.len() != d {
                return Err(Error::Dimension {
                    what: "particle dimension",
                    expected: d,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::FilterDivergence { particle: i });
            }
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config("ensemble weights must form a simplex".into()));
        }
        Ok(Self { particles, weights })
    }

    /// Equal weights `1/N`.
    pub fn uniform(particles: Vec<DVector<f64>>) -> Result<Self> {
        let n = particles.len().max(1);
        let w = vec![1.0 / n as f64; particles.len()];
        Self::new(particles, w)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn particles(&self) -> &[DVector<f64>] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_particles(self) -> Vec<DVector<f64>> {
        self.particles
    }

    pub fn mean(&self) -> DVector<f64> {
        linalg::weighted_mean(&self.particles, &self.weights)
    }

    /// Effective sample size `1 / Σ w²`.
    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.weights)
    }
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().map(|w| w * w).sum();
    if s > 0.0 {
        1.0 / s
    } else {
        0.0
    }
}

/// Scales nonnegative raw weights onto the simplex.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::Config("raw weights must be finite and nonnegative".into()));
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok(raw.iter().map(|w| w / sum).collect())
}

/// Log-domain counterpart of [`normalize_weights`]: `exp(l_i - max)` scaled
/// to sum to one. Fails only when every entry is `-inf` or NaN.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let max = log_w
        .iter()
        .cloned()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let raw: Vec<f64> = log_w
        .iter()
        .map(|l| if l.is_nan() { 0.0 } else { (l - max).exp() })
        .collect();
    normalize_weights(&raw)
}

/// Multinomial (bootstrap) resampling: `n` i.i.d. draws with `P(k) = w_k`.
pub fn resample_bootstrap<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let cdf = cumulative(weights);
    (0..n).map(|_| draw_from_cdf(&cdf, rng.random::<f64>())).collect()
}

/// Residual resampling: `floor(n w_k)` deterministic copies of each index,
/// the remainder drawn multinomially from the residual weights.
pub fn resample_residual<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut residual = Vec::with_capacity(weights.len());
    for (k, w) in weights.iter().enumerate() {
        let expected = n as f64 * w;
        // guard against 0.9999999 style rounding of exact multiples
        let copies = (expected + 1e-9).floor().min(n as f64) as usize;
        out.extend(std::iter::repeat_n(k, copies));
        residual.push((expected - copies as f64).max(0.0));
    }
    out.truncate(n);
    let remaining = n - out.len();
    if remaining > 0 {
        let total: f64 = residual.iter().sum();
        let cdf = if total > 0.0 {
            cumulative(&residual)
        } else {
            cumulative(weights)
        };
        for _ in 0..remaining {
            out.push(draw_from_cdf(&cdf, rng.random::<f64>()));
        }
    }
    out
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

fn draw_from_cdf(cdf: &[f64], u: f64) -> usize {
    let idx = cdf.partition_point(|c| *c <= u);
    // skip trailing zero-weight entries when u lands on the last bucket edge
    let mut idx = idx.min(cdf.len() - 1);
    while idx > 0 && cdf[idx] == cdf[idx - 1] {
        idx -= 1;
    }
    idx
}

/// `n` draws from `N(0, cov)` through the symmetric square root of `cov`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    cov: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let factor = linalg::psd_sqrt(cov)?;
    Ok((0..n).map(|_| gaussian_with_factor(&factor, rng)).collect())
}

/// One draw `F z`, `z ~ N(0, I)`.
pub fn gaussian_with_factor<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_iterator(
        factor.ncols(),
        (0..factor.ncols()).map(|_| StandardNormal.sample(rng)),
    );
    factor * z
}

/// Symmetric smoothing kernel used by [`regularize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    /// Unnormalized kernel profile at standardized offset `u`.
    pub fn profile(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp(),
            Kernel::Epanechnikov => (1.0 - u * u).max(0.0),
        }
    }

    /// Offsets beyond this many bandwidths carry negligible mass.
    fn support(self) -> f64 {
        match self {
            Kernel::Gaussian => 5.0,
            Kernel::Epanechnikov => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizationConfig {
    /// Grid points per dimension (at least 2).
    pub n_reg: usize,
    /// Kernel bandwidth in whitened units; `None` selects
    /// [`optimal_bandwidth`] for the ensemble size and dimension.
    pub bandwidth: Option<f64>,
    pub kernel: Kernel,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            n_reg: 200,
            bandwidth: None,
            kernel: Kernel::Gaussian,
        }
    }
}

impl RegularizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_reg < 2 {
            return Err(Error::Config("n_reg must be at least 2".into()));
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0) {
                return Err(Error::Config("bandwidth must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn bandwidth_for(&self, n: usize, d: usize) -> f64 {
        self.bandwidth.unwrap_or_else(|| optimal_bandwidth(n, d))
    }
}

/// `(4 / (N (d + 2)))^(1 / (d + 4))`.
pub fn optimal_bandwidth(n: usize, d: usize) -> f64 {
    let n = n.max(1) as f64;
    let d = d.max(1) as f64;
    (4.0 / (n * (d + 2.0))).powf(1.0 / (d + 4.0))
}

/// Uniform grid `[min - std, max + std]` with `n_reg` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationGrid {
    pub first: f64,
    pub step: f64,
    pub n: usize,
}

impl RegularizationGrid {
    /// `None` when the values have zero spread.
    pub fn from_values(values: &[f64], n_reg: usize) -> Option<Self> {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(std > 0.0) {
            return None;
        }
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = min - std;
        let last = max + std;
        Some(Self {
            first,
            step: (last - first) / (n_reg - 1) as f64,
            n: n_reg,
        })
    }

    pub fn point(&self, l: usize) -> f64 {
        self.first + self.step * l as f64
    }

    pub fn points(&self) -> Vec<f64> {
        // accumulate as x_l = x_{l-1} + dx
        let mut pts = Vec::with_capacity(self.n);
        let mut x = self.first;
        for _ in 0..self.n {
            pts.push(x);
            x += self.step;
        }
        pts
    }

    pub fn last(&self) -> f64 {
        self.point(self.n - 1)
    }
}

/// Linear map between particle coordinates and whitened coordinates
/// `z = Λ^{-1/2} Uᵀ x` for `Σ = U Λ Uᵀ`. Eigen-directions with zero
/// variance are carried through unscaled and flagged as degenerate.
#[derive(Debug, Clone)]
pub struct Whitening {
    basis: DMatrix<f64>,
    scales: DVector<f64>,
}

impl Whitening {
    pub fn identity(d: usize) -> Self {
        Self {
            basis: DMatrix::identity(d, d),
            scales: DVector::from_element(d, 1.0),
        }
    }

    /// Whitening whose factor `A` satisfies `A Aᵀ = cov`.
    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        let eig = PsdEigen::new(cov)?;
        Ok(Self {
            basis: eig.vectors,
            scales: eig.values.map(f64::sqrt),
        })
    }

    pub fn dim(&self) -> usize {
        self.scales.len()
    }

    /// The factor `A = U Λ^{1/2}`.
    pub fn factor(&self) -> DMatrix<f64> {
        &self.basis * DMatrix::from_diagonal(&self.scales)
    }

    pub fn is_degenerate(&self, d: usize) -> bool {
        !(self.scales[d] > 0.0)
    }

    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut c = self.basis.tr_mul(x);
        for d in 0..c.len() {
            if !self.is_degenerate(d) {
                c[d] /= self.scales[d];
            }
        }
        c
    }

    pub fn unwhiten(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut c = z.clone();
        for d in 0..c.len() {
            if !self.is_degenerate(d) {
                c[d] *= self.scales[d];
            }
        }
        &self.basis * c
    }
}

/// Result of [`regularize`].
#[derive(Debug, Clone)]
pub struct Regularized {
    /// Equally weighted output particles.
    pub particles: Vec<DVector<f64>>,
    /// Whitened dimensions that received no kernel jitter because the
    /// particles had no spread there.
    pub passthrough_dims: Vec<usize>,
    /// Largest normalized input weight exceeded [`COLLAPSE_THRESHOLD`].
    pub collapsed: bool,
}

/// Regularized resampling.
///
/// Particles are mapped to whitened coordinates; for each whitened
/// dimension a grid spanning `[min - std, max + std]` with `n_reg` points is
/// built and the weighted kernel mixture is evaluated on it. New particles
/// are drawn by selecting a mixture component with probability equal to its
/// weight and then, per dimension, a grid cell with probability given by the
/// component kernel on the grid, plus a uniform offset inside the cell. The
/// shared component keeps the joint structure of the ensemble.
pub fn regularize<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    whitening: &Whitening,
    config: &RegularizationConfig,
    rng: &mut R,
) -> Result<Regularized> {
    config.validate()?;
    let n = ensemble.len();
    let d = ensemble.dim();
    if whitening.dim() != d {
        return Err(Error::Dimension {
            what: "whitening dimension",
            expected: d,
            got: whitening.dim(),
        });
    }
    let collapsed = ensemble
        .weights()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        > COLLAPSE_THRESHOLD;
    if collapsed {
        log::debug!("regularize: weight collapse onto a single particle");
    }

    let whitened: Vec<DVector<f64>> = ensemble.particles().iter().map(|p| whitening.whiten(p)).collect();
    let grids: Vec<Option<RegularizationGrid>> = (0..d)
        .map(|k| {
            if whitening.is_degenerate(k) {
                return None;
            }
            let column: Vec<f64> = whitened.iter().map(|z| z[k]).collect();
            RegularizationGrid::from_values(&column, config.n_reg)
        })
        .collect();
    let passthrough_dims: Vec<usize> = (0..d).filter(|k| grids[*k].is_none()).collect();

    let bandwidth = config.bandwidth_for(n, d);
    let selected = resample_bootstrap(ensemble.weights(), n, rng);
    let mut cell_weights = Vec::with_capacity(config.n_reg);
    if passthrough_dims.len() == d {
        return Ok(Regularized {
            particles: selected.into_iter().map(|k| ensemble.particles()[k].clone()).collect(),
            passthrough_dims,
            collapsed,
        });
    }
    let particles = selected
        .into_iter()
        .map(|k| {
            let mut z = whitened[k].clone();
            for (dim, grid) in grids.iter().enumerate() {
                if let Some(grid) = grid {
                    z[dim] = sample_on_grid(grid, z[dim], bandwidth, config.kernel, &mut cell_weights, rng);
                }
            }
            whitening.unwhiten(&z)
        })
        .collect();
    Ok(Regularized {
        particles,
        passthrough_dims,
        collapsed,
    })
}

/// Draw from the kernel centred at `center` restricted to the grid, treating
/// each grid point as the centre of a cell of width `step` (half cells at the
/// two ends).
fn sample_on_grid<R: Rng + ?Sized>(
    grid: &RegularizationGrid,
    center: f64,
    bandwidth: f64,
    kernel: Kernel,
    scratch: &mut Vec<f64>,
    rng: &mut R,
) -> f64 {
    let reach = kernel.support() * bandwidth;
    let lo = (((center - reach - grid.first) / grid.step).floor().max(0.0) as usize).min(grid.n - 1);
    let hi = (((center + reach - grid.first) / grid.step).ceil().max(0.0) as usize).min(grid.n - 1);
    scratch.clear();
    let mut total = 0.0;
    for l in lo..=hi {
        let width = if l == 0 || l == grid.n - 1 { 0.5 } else { 1.0 };
        let w = width * kernel.profile((grid.point(l) - center) / bandwidth);
        total += w;
        scratch.push(total);
    }
    let l = if total > 0.0 {
        lo + draw_from_cdf(scratch, rng.random::<f64>() * total)
    } else {
        // kernel narrower than the grid spacing: nearest grid point
        (((center - grid.first) / grid.step).round().max(0.0) as usize).min(grid.n - 1)
    };
    let half = 0.5 * grid.step;
    let (a, b) = if l == 0 {
        (0.0, half)
    } else if l == grid.n - 1 {
        (-half, 0.0)
    } else {
        (-half, half)
    };
    grid.point(l) + a + (b - a) * rng.random::<f64>()
}

/// The weighted kernel mixture of a one-dimensional particle set evaluated on
/// its regularization grid. Returns `(grid points, density values)`.
pub fn regularized_density(
    values: &[f64],
    weights: &[f64],
    config: &RegularizationConfig,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let grid = RegularizationGrid::from_values(values, config.n_reg)?;
    let b = config.bandwidth_for(values.len(), 1);
    let norm = match config.kernel {
        Kernel::Gaussian => 1.0 / (2.0 * std::f64::consts::PI).sqrt(),
        Kernel::Epanechnikov => 0.75,
    };
    let pts = grid.points();
    let dens = pts
        .iter()
        .map(|g| {
            values
                .iter()
                .zip(weights)
                .map(|(v, w)| w * norm * config.kernel.profile((g - v) / b) / b)
                .sum()
        })
        .collect();
    Some((pts, dens))
}
