//! Explicit operators from the invariant-subspace constructions: the banded
//! operator `T = M P + delta <e*_{N+p+1}, .> u + S`, rank-one perturbations
//! `T + delta (sum e_j) (x) e_i*`, and the checks that accompany them.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commutant::{CommutantCone, CommutantConstraint, FEASIBILITY_TOL};
use crate::error::{Error, Result};
use crate::norms::{is_contraction, operator_norm, vector_norm};
use crate::operator::{SpaceConfig, TruncatedPositiveOperator};
use crate::spectral::perron_pair;

/// Threshold `eta` used by the commutant collapse check.
pub const COLLAPSE_ETA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum RecipeViolation {
    #[error("M must be (N+1)x(N+1) = {expected}x{expected}, found {found}x{found}")]
    BlockDimension { expected: usize, found: usize },
    #[error("M must have strictly positive entries; entry ({row}, {col}) is {value:e}")]
    NonPositiveEntry { row: usize, col: usize, value: f64 },
    #[error("||M||_q = {norm} must be < 1")]
    NormNotBelowOne { norm: f64 },
    #[error("p = {p} must be <= N = {n}")]
    IndexOutOfRange { p: usize, n: usize },
    #[error("epsilon = {epsilon} must be > 0")]
    NonPositiveEpsilon { epsilon: f64 },
    #[error("delta = {delta} must be > 0")]
    NonPositiveDelta { delta: f64 },
    #[error("delta_{k} = {value} must be > 0")]
    NonPositiveSchedule { k: usize, value: f64 },
    #[error("truncation L = {truncation} must be >= 2N + p + 3 = {min}")]
    TruncationTooSmall { truncation: usize, min: usize },
    #[error("delta schedule needs {needed} terms for this truncation, found {found}")]
    ScheduleTooShort { needed: usize, found: usize },
    #[error("tail sum {sum} of the delta schedule must be < 1 - ||M|| = {budget}")]
    TailBudget { sum: f64, budget: f64 },
    #[error("delta = {delta} must be < (1 - ||M|| - tail) / (||u||_q + N + p + 2) = {bound}")]
    ContractionBound { delta: f64, bound: f64 },
    #[error("delta = {delta} must be < epsilon = {epsilon}")]
    EpsilonBound { delta: f64, epsilon: f64 },
    #[error("delta = {delta} must be < <e_p*, M e_p> = {diagonal}")]
    DiagonalBound { delta: f64, diagonal: f64 },
}

/// Parameters of the banded operator. `n_block` is `N`; `m` acts on
/// `e_0..e_N`; `delta_schedule[k - 1]` is `delta_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructionRecipe {
    pub m: TruncatedPositiveOperator,
    #[serde(rename = "n")]
    pub n_block: usize,
    pub p: usize,
    pub delta: f64,
    pub delta_schedule: Vec<f64>,
    pub truncation: usize,
    pub epsilon: f64,
}

/// JSON form of a recipe; missing values are filled with the defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeFile {
    pub m: TruncatedPositiveOperator,
    #[serde(rename = "n")]
    pub n_block: Option<usize>,
    pub p: usize,
    pub delta: Option<f64>,
    pub delta_schedule: Option<Vec<f64>>,
    pub truncation: Option<usize>,
    pub epsilon: f64,
}

impl RecipeFile {
    pub fn into_recipe(self) -> Result<ConstructionRecipe> {
        let n_block = self.n_block.unwrap_or(self.m.dim().saturating_sub(1));
        ConstructionRecipe::with_options(
            self.m,
            n_block,
            self.p,
            self.epsilon,
            self.delta,
            self.delta_schedule,
            self.truncation,
        )
    }
}

impl<'de> Deserialize<'de> for ConstructionRecipe {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        RecipeFile::deserialize(d)?.into_recipe().map_err(serde::de::Error::custom)
    }
}

/// Smallest truncation holding `u`, the shifted images of `e_0..e_{N+p+1}` and `e_{2N+1}`.
pub fn minimal_truncation(n_block: usize, p: usize) -> usize {
    2 * n_block + p + 3
}

pub fn default_truncation(n_block: usize, p: usize) -> usize {
    minimal_truncation(n_block, p) + 3 * (n_block + 1)
}

/// Number of `delta_k` that land inside a truncation of size `truncation`.
pub fn schedule_len(n_block: usize, p: usize, truncation: usize) -> usize {
    truncation.saturating_sub(minimal_truncation(n_block, p))
}

/// `delta_k = c 2^-k` with `c = (1 - ||M||) / 2`.
pub fn default_schedule(m_norm: f64, len: usize) -> Vec<f64> {
    let c = (1.0 - m_norm) / 2.0;
    (1..=len).map(|k| c * 0.5f64.powi(k as i32)).collect()
}

fn u_norm(n_block: usize, p: usize, q: f64) -> f64 {
    vector_norm(&vec![1.0; n_block + p + 2], q)
}

/// Largest `delta` allowed by the three strict upper bounds (the returned
/// value itself is excluded).
pub fn max_admissible_delta(
    m: &TruncatedPositiveOperator,
    n_block: usize,
    p: usize,
    delta_schedule: &[f64],
    epsilon: f64,
    truncation: usize,
) -> Result<f64> {
    let m_norm = operator_norm(m).value;
    if m_norm >= 1.0 {
        return Err(RecipeViolation::NormNotBelowOne { norm: m_norm }.into());
    }
    if p >= m.dim() {
        return Err(RecipeViolation::IndexOutOfRange { p, n: n_block }.into());
    }
    let used = schedule_len(n_block, p, truncation).min(delta_schedule.len());
    let tail: f64 = delta_schedule[..used].iter().sum();
    let budget = 1.0 - m_norm;
    if tail >= budget {
        return Err(RecipeViolation::TailBudget { sum: tail, budget }.into());
    }
    let contraction = (budget - tail) / (u_norm(n_block, p, m.q()) + (n_block + p + 2) as f64);
    Ok(contraction.min(epsilon).min(m.entry(p, p)))
}

impl ConstructionRecipe {
    /// Recipe with every optional parameter at its default: `L` from
    /// [`default_truncation`], the geometric schedule and half the largest
    /// admissible `delta`.
    pub fn new(m: TruncatedPositiveOperator, n_block: usize, p: usize, epsilon: f64) -> Result<Self> {
        Self::with_options(m, n_block, p, epsilon, None, None, None)
    }

    pub fn with_options(
        m: TruncatedPositiveOperator,
        n_block: usize,
        p: usize,
        epsilon: f64,
        delta: Option<f64>,
        delta_schedule: Option<Vec<f64>>,
        truncation: Option<usize>,
    ) -> Result<Self> {
        let truncation = truncation.unwrap_or_else(|| default_truncation(n_block, p));
        let delta_schedule = match delta_schedule {
            Some(s) => s,
            None => default_schedule(operator_norm(&m).value, schedule_len(n_block, p, truncation)),
        };
        let mut r = ConstructionRecipe {
            m,
            n_block,
            p,
            delta: f64::NAN,
            delta_schedule,
            truncation,
            epsilon,
        };
        r.check_structure()?;
        r.delta = match delta {
            Some(d) => d,
            None => 0.5 * max_admissible_delta(&r.m, n_block, p, &r.delta_schedule, epsilon, truncation)?,
        };
        r.validate()?;
        Ok(r)
    }

    /// Same recipe at another truncation. A schedule that is too short is
    /// continued with the default geometric terms.
    pub fn with_truncation(&self, truncation: usize) -> Result<Self> {
        let mut r = self.clone();
        r.truncation = truncation;
        let needed = schedule_len(r.n_block, r.p, truncation);
        if r.delta_schedule.len() < needed {
            let extra = default_schedule(operator_norm(&r.m).value, needed);
            r.delta_schedule.extend_from_slice(&extra[r.delta_schedule.len()..]);
        }
        r.validate()?;
        Ok(r)
    }

    pub fn space(&self) -> &SpaceConfig {
        self.m.space()
    }

    fn check_structure(&self) -> Result<()> {
        let n = self.n_block;
        if self.m.dim() != n + 1 {
            return Err(RecipeViolation::BlockDimension {
                expected: n + 1,
                found: self.m.dim(),
            }
            .into());
        }
        if self.p > n {
            return Err(RecipeViolation::IndexOutOfRange { p: self.p, n }.into());
        }
        for l in 0..=n {
            for k in 0..=n {
                let value = self.m.entry(k, l);
                if !(value > 0.0) {
                    return Err(RecipeViolation::NonPositiveEntry { row: k, col: l, value }.into());
                }
            }
        }
        let norm = operator_norm(&self.m).value;
        if norm >= 1.0 {
            return Err(RecipeViolation::NormNotBelowOne { norm }.into());
        }
        if !(self.epsilon > 0.0) {
            return Err(RecipeViolation::NonPositiveEpsilon { epsilon: self.epsilon }.into());
        }
        let min = minimal_truncation(n, self.p);
        if self.truncation < min {
            return Err(RecipeViolation::TruncationTooSmall {
                truncation: self.truncation,
                min,
            }
            .into());
        }
        let needed = schedule_len(n, self.p, self.truncation);
        if self.delta_schedule.len() < needed {
            return Err(RecipeViolation::ScheduleTooShort {
                needed,
                found: self.delta_schedule.len(),
            }
            .into());
        }
        if let Some((k, &value)) = self.delta_schedule.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(RecipeViolation::NonPositiveSchedule { k: k + 1, value }.into());
        }
        Ok(())
    }

    /// Checks every inequality on the parameters.
    pub fn validate(&self) -> Result<()> {
        self.check_structure()?;
        let n = self.n_block;
        let delta = self.delta;
        if !(delta > 0.0) {
            return Err(RecipeViolation::NonPositiveDelta { delta }.into());
        }
        let m_norm = operator_norm(&self.m).value;
        let needed = schedule_len(n, self.p, self.truncation);
        let tail: f64 = self.delta_schedule[..needed].iter().sum();
        let budget = 1.0 - m_norm;
        if tail >= budget {
            return Err(RecipeViolation::TailBudget { sum: tail, budget }.into());
        }
        let bound = (budget - tail) / (u_norm(n, self.p, self.m.q()) + (n + self.p + 2) as f64);
        if delta >= bound {
            return Err(RecipeViolation::ContractionBound { delta, bound }.into());
        }
        if delta >= self.epsilon {
            return Err(RecipeViolation::EpsilonBound {
                delta,
                epsilon: self.epsilon,
            }
            .into());
        }
        let diagonal = self.m.entry(self.p, self.p);
        if delta >= diagonal {
            return Err(RecipeViolation::DiagonalBound { delta, diagonal }.into());
        }
        Ok(())
    }
}

/// The `L x L` matrix of `T = M P + delta <e*_{N+p+1}, .> u + S`.
pub fn build_theorem_operator(r: &ConstructionRecipe) -> Result<TruncatedPositiveOperator> {
    r.validate()?;
    let n = r.n_block;
    let len = r.truncation;
    let hinge = n + r.p + 1;
    let mut t = DMatrix::zeros(len, len);
    for l in 0..=n {
        for k in 0..=n {
            t[(k, l)] = r.m.entry(k, l);
        }
    }
    for k in 0..=hinge {
        t[(k, hinge)] += r.delta;
    }
    for k in 0..len - n - 1 {
        t[(k + n + 1, k)] += if k <= hinge {
            r.delta
        } else {
            r.delta_schedule[k - hinge - 1]
        };
    }
    let t = TruncatedPositiveOperator::new(t, *r.space())?;
    assert!(
        is_contraction(&t),
        "validated recipe produced a non-contraction (norm {})",
        operator_norm(&t).value
    );
    Ok(t)
}

/// `||(T - M) e_k||_q` and `||(T - M)^* e_k*||_{q*}` for `k <= N`, with `M`
/// padded by zeros.
pub fn approximation_errors(r: &ConstructionRecipe, t: &TruncatedPositiveOperator) -> Vec<(f64, f64)> {
    let n = r.n_block;
    let q = t.q();
    let q_dual = t.space().dual_exponent();
    let diff = |k: usize, l: usize| {
        let m = if k <= n && l <= n { r.m.entry(k, l) } else { 0.0 };
        t.entry(k, l) - m
    };
    (0..=n)
        .map(|k| {
            let col: Vec<f64> = (0..t.dim()).map(|row| diff(row, k)).collect();
            let row: Vec<f64> = (0..t.dim()).map(|c| diff(k, c)).collect();
            (vector_norm(&col, q), vector_norm(&row, q_dual))
        })
        .collect()
}

/// `T + delta (sum_{j in targets} e_j) (x) e_source*`.
pub fn rank_one_perturbation(
    t: &TruncatedPositiveOperator,
    source: usize,
    targets: &[usize],
    delta: f64,
) -> Result<TruncatedPositiveOperator> {
    let n = t.dim();
    if !(delta > 0.0) {
        return Err(Error::Precondition(format!("delta = {delta} must be > 0")));
    }
    if let Some(&bad) = std::iter::once(&source).chain(targets).find(|&&i| i >= n) {
        return Err(Error::Dimension(format!("index {bad} outside dim {n}")));
    }
    let mut m = t.entries().clone();
    for &j in targets {
        m[(j, source)] += delta;
    }
    TruncatedPositiveOperator::new(m, *t.space())
}

/// Re-derives `D = 0` from `B C = C B + delta D`, `C > 0` and `D >= 0`:
/// with Perron vectors `x`, `y` of `C`, `y^t D x = 0`, and strict
/// positivity of `x` and `y` leaves no room for a nonzero `D >= 0`.
pub fn perron_cancellation_check(b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>, delta: f64) -> Result<bool> {
    let n = c.nrows();
    for m in [b, c, d] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Dimension(format!(
                "B, C, D must all be {n}x{n}, found {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    if !(delta > 0.0) {
        return Err(Error::Precondition(format!("delta = {delta} must be > 0")));
    }
    let space = SpaceConfig::default();
    if let Some((idx, v)) = c.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Relation(format!(
            "C must be strictly positive; entry ({}, {}) is {v:e}",
            idx % n,
            idx / n
        )));
    }
    let d_pos = TruncatedPositiveOperator::new(d.clone(), space)?;
    let scale = b.norm() * c.norm() + delta * d.norm();
    let residual = (b * c - c * b - d * delta).norm();
    if residual > space.tol_rel * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Relation(format!(
            "||BC - CB - delta D||_F = {residual:e} exceeds tolerance"
        )));
    }
    let pair = perron_pair(&TruncatedPositiveOperator::new(c.clone(), space)?)?;
    let x = nalgebra::DVector::from_column_slice(pair.right_vector.as_slice());
    let y = nalgebra::DVector::from_column_slice(pair.left_vector.as_slice());
    let pairing = y.dot(&(d_pos.entries() * &x));
    // y^t B C x - y^t C B x vanishes up to the round-off of either product.
    let pairing_scale = y.norm() * x.norm() * d.norm().max(b.norm() * c.norm() / delta);
    let pairing_ok = pairing.abs() <= space.tol_rel * pairing_scale.max(f64::MIN_POSITIVE);
    Ok(pairing_ok && d_pos.max_entry() <= space.tol_rel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintVerdict {
    pub constraint: CommutantConstraint,
    pub feasible: bool,
    pub surrogate_value: f64,
}

/// Largest value of `sum_{(k,l) in region} a_kl` over the normalized positive
/// commutant cone with `a_pp = 0`; the assertion holds when it is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseAssertion {
    pub name: String,
    pub max_value: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub truncation_dim: usize,
    pub commutant_rank: usize,
    pub verdicts: Vec<ConstraintVerdict>,
    pub assertions: Vec<CollapseAssertion>,
    /// Total mass of the best cone element with `a_pp = 0`. Nonzero values
    /// come from the truncation boundary and are reported, not asserted.
    pub zero_diagonal_mass: f64,
    pub all_infeasible: bool,
    pub violations: Vec<CommutantConstraint>,
}

impl CollapseReport {
    pub fn is_violation(&self) -> bool {
        !self.all_infeasible || self.assertions.iter().any(|a| !a.holds)
    }
}

pub fn verify_theorem_commutant_collapse(r: &ConstructionRecipe) -> Result<CollapseReport> {
    let t = build_theorem_operator(r)?;
    let cone = CommutantCone::new(&t)?;
    let n = r.n_block;
    let p = r.p;
    let constraints: Vec<CommutantConstraint> = (0..=n)
        .flat_map(|i| (0..=n).filter(move |&j| j != i).map(move |j| CommutantConstraint::new(i, j, COLLAPSE_ETA, p)))
        .collect();
    let verdicts = constraints
        .par_iter()
        .map(|c| {
            cone.f_set_membership(c).map(|res| ConstraintVerdict {
                constraint: *c,
                feasible: res.feasible,
                surrogate_value: res.certificate.surrogate_value,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let region = |rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>| {
        rows.flat_map(|k| cols.clone().map(move |l| (k, l, 1.0))).collect::<Vec<_>>()
    };
    let checks = [
        ("row N+p+1 vanishes on e_0..e_N", region(n + p + 1..=n + p + 1, 0..=n)),
        ("P A e_k = 0 for N+1 <= k <= 2N+1", region(0..=n, n + 1..=2 * n + 1)),
        ("P A e_k = 0 for 0 <= k <= 2N+1", region(0..=n, 0..=2 * n + 1)),
    ];
    let zero = [(p, p)];
    let mut assertions = Vec::new();
    for (name, weights) in checks {
        let opt = cone.maximize(&weights, &zero)?;
        assertions.push(CollapseAssertion {
            name: name.to_string(),
            max_value: opt.value,
            holds: opt.value <= FEASIBILITY_TOL,
        });
    }
    let everything = region(0..=t.dim() - 1, 0..=t.dim() - 1);
    let zero_diagonal_mass = cone.maximize(&everything, &zero)?.value;

    let violations: Vec<CommutantConstraint> =
        verdicts.iter().filter(|v| v.feasible).map(|v| v.constraint).collect();
    Ok(CollapseReport {
        truncation_dim: t.dim(),
        commutant_rank: cone.basis().rank,
        all_infeasible: violations.is_empty(),
        verdicts,
        assertions,
        zero_diagonal_mass,
        violations,
    })
}
