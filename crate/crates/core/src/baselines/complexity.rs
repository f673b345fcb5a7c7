//! Equivalent-flop (EF) cost model and particle-budget matching.
//!
//! `c1`, `c2`, `c3` are the unit costs of random-number generation,
//! resampling and regularization. The per-instruction tables below are the
//! itemized operation counts of one filter step; the closed-form totals keep
//! only the terms proportional to `N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub n_x: f64,
    pub n_theta: f64,
    pub n_y: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Particle count.
    pub n: f64,
}

impl CostModel {
    pub fn new(n_x: usize, n_theta: usize, n_y: usize, c: [f64; 3], n: f64) -> Self {
        Self {
            n_x: n_x as f64,
            n_theta: n_theta as f64,
            n_y: n_y as f64,
            c1: c[0],
            c2: c[1],
            c3: c[2],
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_x, self.n_theta, self.n_y];
        if dims.iter().any(|d| !(*d >= 1.0)) {
            return Err(Error::Config("cost model dimensions must be positive".into()));
        }
        if [self.c1, self.c2, self.c3].iter().any(|c| !(*c > 0.0)) || !(self.n >= 0.0) {
            return Err(Error::Config("unit costs must be positive and N nonnegative".into()));
        }
        Ok(())
    }

    pub fn with_n(self, n: f64) -> Self {
        Self { n, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dual,
    Bayesian,
    Rml,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dual, Method::Bayesian, Method::Rml];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dual => "dual",
            Method::Bayesian => "bayesian",
            Method::Rml => "rml",
        }
    }
}

/// Per-particle coefficient of the closed-form EF total.
pub fn per_particle(method: Method, c: &CostModel) -> f64 {
    let (x, th, y) = (c.n_x, c.n_theta, c.n_y);
    match method {
        Method::Dual => {
            3.0 * x * x + 5.0 * th * th + 6.0 * th + 2.0 * th * y + 7.0 * y + 3.0 * x + c.c1 * (x + th) + c.c2 * (x + th) + c.c3 * x
        }
        Method::Bayesian => {
            3.0 * x * x + 3.0 * th * th + 6.0 * x * th + (1.0 + c.c1 + c.c2 + c.c3) * x + (1.0 + c.c1 + c.c2 + c.c3) * th + y
        }
        Method::Rml => 2.0 * x * x + 4.0 * th + 2.0 * x + c.c1 * (2.0 * x + th) + c.c2 * x + c.c3 * x,
    }
}

/// Approximate EF cost of one step with `c.n` particles.
pub fn ef_complexity(method: Method, c: &CostModel) -> f64 {
    c.n * per_particle(method, c)
}

/// One itemized instruction: multiplications, additions, function
/// evaluations and other costs.
pub struct Instruction {
    pub name: &'static str,
    pub cells: [fn(&CostModel) -> f64; 4],
}

fn zero(_: &CostModel) -> f64 {
    0.0
}

macro_rules! instr {
    ($name:expr, $m:expr, $a:expr, $f:expr, $o:expr) => {
        Instruction {
            name: $name,
            cells: [$m, $a, $f, $o],
        }
    };
}

/// State-estimation step of the dual scheme.
pub fn dual_state_table() -> Vec<Instruction> {
    vec![
        instr!("schur(prior cov)", zero, zero, zero, |c| 10.0 * c.n_x.powi(3)),
        instr!("randn(n_x, N)", zero, zero, zero, |c| c.n * c.n_x * c.c1),
        instr!(
            "process noise",
            |c| c.n_x.powi(3) + c.n * c.n_x * c.n_x,
            |c| (c.n_x - 1.0) * c.n_x * c.n_x + c.n * (c.n_x - 1.0) * c.n_x,
            zero,
            |c| c.n_x * c.n_x
        ),
        instr!("propagate", zero, zero, |c| c.n * c.n_x, zero),
        instr!("predict outputs", zero, zero, |c| c.n * c.n_y, zero),
        instr!("prior covariance", |c| c.n * c.n_x * c.n_x, |c| 2.0 * c.n * c.n_x, zero, zero),
        instr!("regularize and resample", zero, zero, zero, |c| c.n * c.n_x * (c.c2 + c.c3)),
        instr!("mean", |c| c.n_x, |c| c.n * c.n_x, zero, zero),
    ]
}

/// Parameter-estimation step of the dual scheme.
pub fn dual_parameter_table() -> Vec<Instruction> {
    vec![
        instr!("candidate outputs", zero, zero, |c| c.n * c.n_y, zero),
        instr!(
            "kernel covariance",
            |c| c.n_theta.powi(3),
            |c| (c.n_theta - 1.0) * c.n_theta * c.n_theta + c.n_theta * c.n_theta,
            zero,
            zero
        ),
        instr!("prediction errors", zero, |c| c.n * c.n_y, zero, zero),
        instr!("output jacobian", zero, zero, |c| c.n_y * c.n_theta, zero),
        instr!(
            "updating gain",
            |c| c.n + c.n * c.n_y,
            |c| c.n * (c.n_y - 1.0) + c.n * c.n_y,
            zero,
            zero
        ),
        instr!("schur(kernel cov)", zero, zero, zero, |c| 10.0 * c.n_theta.powi(3)),
        instr!("randn(n_theta, N)", zero, zero, zero, |c| c.n * c.n_theta * c.c1),
        instr!(
            "evolution noise",
            |c| c.n_theta.powi(3) + c.n * c.n_theta * c.n_theta,
            |c| (c.n_theta - 1.0) * c.n_theta * c.n_theta + c.n * (c.n_theta - 1.0) * c.n_theta,
            |c| c.n_theta * c.n_theta,
            zero
        ),
        instr!(
            "gradient step",
            |c| c.n * (c.n_y * c.n_theta + c.n_theta),
            |c| c.n * (c.n_y - 1.0) * c.n_theta + c.n * c.n_theta,
            zero,
            zero
        ),
        instr!(
            "shrinkage",
            |c| c.n * c.n_theta * c.n_theta + c.n_theta,
            |c| c.n * c.n_theta * c.n_theta + 3.0 * c.n * c.n_theta + c.n_theta * c.n_theta,
            zero,
            zero
        ),
        instr!("evolved outputs", zero, zero, |c| c.n * c.n_y, zero),
        instr!("resample", zero, zero, zero, |c| c.n * c.n_theta * c.c2),
        instr!("mean", |c| c.n_theta, |c| c.n * c.n_theta, zero, zero),
        instr!("covariance", |c| c.n * c.n_theta * c.n_theta, |c| 2.0 * c.n * c.n_theta, zero, zero),
    ]
}

/// Augmented-state Bayesian scheme.
pub fn bayesian_table() -> Vec<Instruction> {
    fn a(c: &CostModel) -> f64 {
        c.n_x + c.n_theta
    }
    vec![
        instr!("schur(augmented cov)", zero, zero, zero, |c| 10.0 * a(c).powi(3)),
        instr!("randn(n_x + n_theta, N)", zero, zero, zero, |c| c.n * a(c) * c.c1),
        instr!(
            "augmented noise",
            |c| a(c).powi(3) + c.n * a(c).powi(2),
            |c| (a(c) - 1.0) * a(c).powi(2) + c.n * (a(c) - 1.0) * a(c),
            zero,
            |c| a(c).powi(2)
        ),
        instr!(
            "parameter noise scaling",
            |c| c.n_theta.powi(3),
            |c| (c.n_theta - 1.0) * c.n_theta * c.n_theta + c.n_theta * c.n_theta,
            zero,
            zero
        ),
        instr!("augmented propagation", zero, zero, |c| c.n * a(c), zero),
        instr!("predict outputs", zero, zero, |c| c.n * c.n_y, zero),
        instr!("augmented covariance", |c| c.n * a(c).powi(2), |c| 2.0 * c.n * a(c), zero, zero),
        instr!("regularize and resample", zero, zero, zero, |c| c.n * a(c) * (c.c3 + c.c2)),
        instr!("mean", |c| a(c), |c| c.n * a(c), zero, zero),
    ]
}

/// RML parameter scheme with SPSA gradients.
pub fn rml_table() -> Vec<Instruction> {
    vec![
        instr!("schur(state cov)", zero, zero, zero, |c| 10.0 * c.n_x.powi(3)),
        instr!("randn(n_x, N)", zero, zero, zero, |c| c.n * c.n_x * c.c1),
        instr!(
            "process noise",
            |c| c.n_x.powi(3) + c.n * c.n_x * c.n_x,
            |c| (c.n_x - 1.0) * c.n_x * c.n_x + c.n * (c.n_x - 1.0) * c.n_x,
            zero,
            |c| c.n_x * c.n_x
        ),
        instr!("perturbation", zero, zero, zero, |c| c.n_theta * c.c1),
        instr!("propagate +", zero, zero, zero, |c| c.n * c.n_x),
        instr!("propagate -", zero, zero, zero, |c| c.n * c.n_x),
        instr!("evaluate", zero, zero, zero, |c| c.n * (c.n_x + c.n_theta) * c.c1),
        instr!("incremental likelihoods", zero, zero, zero, |c| 2.0 * c.n * c.n_theta),
        instr!("gradient", |c| c.n_theta + 1.0, |c| 2.0 * c.n_theta - 1.0, zero, zero),
        instr!(
            "log mean likelihoods",
            |c| 2.0 * c.n_theta,
            |c| 2.0 * c.n * c.n_theta,
            |c| 2.0 * c.n_theta,
            zero
        ),
        instr!(
            "parameter update",
            |c| c.n_theta * c.n_theta,
            |c| c.n_theta + (c.n_theta - 1.0) * c.n_theta,
            zero,
            zero
        ),
        instr!("propagate", zero, zero, |c| c.n * c.n_x, zero),
        instr!("regularize and resample", zero, zero, zero, |c| c.n * c.n_x * (c.c2 + c.c3)),
    ]
}

/// Itemized tables making up one step of `method`.
pub fn tables(method: Method) -> Vec<Vec<Instruction>> {
    match method {
        Method::Dual => vec![dual_state_table(), dual_parameter_table()],
        Method::Bayesian => vec![bayesian_table()],
        Method::Rml => vec![rml_table()],
    }
}

/// Sum of every cell of the itemized tables.
pub fn table_total(method: Method, c: &CostModel) -> f64 {
    tables(method)
        .iter()
        .flatten()
        .map(|i| i.cells.iter().map(|f| f(c)).sum::<f64>())
        .sum()
}

/// Coefficient of `N` in the itemized total. Every cell is affine in `N`.
pub fn table_per_particle(method: Method, c: &CostModel) -> f64 {
    table_total(method, &c.with_n(1.0)) - table_total(method, &c.with_n(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Bayesian,
    Rml,
}

/// Ratio `N / N_ref` from the closed-form budget equations.
pub fn budget_factor(reference: Reference, c: &CostModel) -> Result<f64> {
    c.validate()?;
    let (x, th, y) = (c.n_x, c.n_theta, c.n_y);
    let dual = per_particle(Method::Dual, c);
    let num = match reference {
        Reference::Bayesian => 2.0 * th * th + 5.0 * th + 2.0 * th * y + 6.0 * y + 2.0 * th - 6.0 * x * th - c.c3 * th,
        Reference::Rml => x * x + 5.0 * th * th + 2.0 * th + x + 2.0 * th * y + 7.0 * y + c.c2 * th,
    };
    Ok(1.0 - num / dual)
}

/// Particle count of the dual scheme matching a reference method run with
/// `n_ref` particles.
pub fn match_particle_budget(reference: Reference, n_ref: f64, c: &CostModel) -> Result<f64> {
    let n = n_ref * budget_factor(reference, c)?;
    if !(n > 0.0) {
        return Err(Error::Budget(n));
    }
    Ok(n)
}

/// Inverse of [`match_particle_budget`]: reference particles matching a
/// dual run with `n_dual` particles.
pub fn reference_budget(reference: Reference, n_dual: f64, c: &CostModel) -> Result<f64> {
    let f = budget_factor(reference, c)?;
    let n = n_dual / f;
    if !(f > 0.0) || !(n > 0.0) || !n.is_finite() {
        return Err(Error::Budget(n));
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub cost: CostModel,
    pub n_dual: f64,
    pub n_bayesian: f64,
    pub n_rml: f64,
    pub ef_dual: f64,
    pub ef_bayesian: f64,
    pub ef_rml: f64,
}

impl ComplexityReport {
    /// Matched reference budgets for a dual run with `c.n` particles.
    pub fn matched(c: &CostModel) -> Result<Self> {
        let n_bayesian = reference_budget(Reference::Bayesian, c.n, c)?;
        let n_rml = reference_budget(Reference::Rml, c.n, c)?;
        Ok(Self {
            cost: *c,
            n_dual: c.n,
            n_bayesian,
            n_rml,
            ef_dual: ef_complexity(Method::Dual, c),
            ef_bayesian: ef_complexity(Method::Bayesian, &c.with_n(n_bayesian)),
            ef_rml: ef_complexity(Method::Rml, &c.with_n(n_rml)),
        })
    }
}
