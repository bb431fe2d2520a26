//! Dense dictionary simplex for small linear programs of the form
//!
//! ```text
//! maximize c^t x   subject to   A x <= b,  x >= 0,   with b >= 0.
//! ```
//!
//! `b >= 0` makes the origin a basic feasible point, so no phase one is
//! needed. Every cone program in this crate has that shape because
//! `A = 0` always satisfies its constraints. Pricing is Dantzig with a
//! Harris ratio test. A long run of degenerate pivots first triggers a tiny
//! perturbation of the right-hand side and, if it recurs, Bland's rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const PRICE_TOL: f64 = 1e-11;
const HARRIS_TOL: f64 = 1e-11;
const PERTURBATION: f64 = 1e-10;
const DEGENERATE_STREAK: usize = 50;
pub const DEFAULT_PIVOT_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    #[serde(skip)]
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers of the `A x <= b` rows read off the final dictionary.
    #[serde(skip)]
    pub dual: Vec<f64>,
    pub dual_objective: f64,
    pub duality_gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        LinearProgram {
            objective,
            rows: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, row: Vec<f64>, rhs: f64) {
        debug_assert_eq!(row.len(), self.objective.len());
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    pub fn maximize(&self) -> Result<LpSolution> {
        self.maximize_with_limit(DEFAULT_PIVOT_LIMIT)
    }

    pub fn maximize_with_limit(&self, pivot_limit: usize) -> Result<LpSolution> {
        let n = self.num_vars();
        let m = self.rows.len();
        if let Some(i) = self.rhs.iter().position(|&b| !(b >= 0.0)) {
            return Err(Error::Solver(format!(
                "right-hand side {i} is {}; origin must be feasible",
                self.rhs[i]
            )));
        }
        // x_B = b - a x_N ;  z = z0 + c x_N, with z0 left implicit
        let mut a: Vec<Vec<f64>> = self.rows.clone();
        let mut b = self.rhs.clone();
        let mut c = self.objective.clone();
        let mut nonbasic: Vec<usize> = (0..n).collect();
        let mut basic: Vec<usize> = (n..n + m).collect();
        let mut bland = false;
        let mut perturbed = false;
        // Perturbation carried through the pivots, removed from the final vertex.
        let mut shift = vec![0.0; m];
        let mut streak = 0;
        let mut iterations = 0;
        let status = loop {
            let entering = if bland {
                (0..n)
                    .filter(|&j| c[j] > PRICE_TOL)
                    .min_by_key(|&j| nonbasic[j])
            } else {
                (0..n)
                    .filter(|&j| c[j] > PRICE_TOL)
                    .max_by(|&i, &j| c[i].partial_cmp(&c[j]).unwrap())
            };
            let Some(s) = entering else {
                break LpStatus::Optimal;
            };
            if iterations >= pivot_limit {
                break LpStatus::IterationLimit;
            }
            let leave = if bland {
                bland_ratio(&a, &b, &basic, s)
            } else {
                harris_ratio(&a, &b, s)
            };
            let Some((r, ratio)) = leave else {
                break LpStatus::Unbounded;
            };
            if ratio <= 1e-14 {
                streak += 1;
                if streak > DEGENERATE_STREAK {
                    if perturbed {
                        bland = true;
                    } else {
                        // Spread the tied zero ratios apart; this shifts the
                        // original right-hand side by O(PERTURBATION).
                        perturbed = true;
                        streak = 0;
                        for i in 0..m {
                            let frac = (i as f64 * 0.618_033_988_749_895).fract();
                            shift[i] = PERTURBATION * (1.0 + frac);
                            b[i] += shift[i];
                        }
                        continue;
                    }
                }
            } else {
                streak = 0;
            }
            iterations += 1;

            let piv = a[r][s];
            let row_r: Vec<f64> = a[r].iter().map(|v| v / piv).collect();
            let b_r = b[r] / piv;
            let shift_r = shift[r] / piv;
            for i in 0..m {
                if i == r {
                    continue;
                }
                let f = a[i][s];
                if f == 0.0 {
                    continue;
                }
                let ai = &mut a[i];
                for j in 0..n {
                    ai[j] -= f * row_r[j];
                }
                ai[s] = -f / piv;
                b[i] -= f * b_r;
                shift[i] -= f * shift_r;
                if b[i] < 0.0 && b[i] > -1e-9 {
                    b[i] = 0.0;
                }
            }
            let cs = c[s];
            for j in 0..n {
                c[j] -= cs * row_r[j];
            }
            c[s] = -cs / piv;
            a[r] = row_r;
            a[r][s] = 1.0 / piv;
            b[r] = b_r;
            shift[r] = shift_r;
            std::mem::swap(&mut basic[r], &mut nonbasic[s]);
        };

        let mut x = vec![0.0; n];
        for (i, &label) in basic.iter().enumerate() {
            if label < n {
                x[label] = (b[i] - shift[i]).max(0.0);
            }
        }
        if let Some(refined) = self.resolve_vertex(&basic, &nonbasic) {
            x = refined;
        }
        let mut dual = vec![0.0; m];
        for (j, &label) in nonbasic.iter().enumerate() {
            if label >= n {
                dual[label - n] = -c[j];
            }
        }
        let dual_objective: f64 = dual.iter().zip(&self.rhs).map(|(y, b)| y * b).sum();
        let objective: f64 = self.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
        Ok(LpSolution {
            status,
            x,
            objective,
            dual,
            dual_objective,
            duality_gap: (dual_objective - objective).abs(),
            iterations,
        })
    }
}

impl LinearProgram {
    /// Basic structural values recomputed from the original rows whose
    /// slacks are nonbasic (tight), which removes the round-off the
    /// dictionary updates accumulate.
    fn resolve_vertex(&self, basic: &[usize], nonbasic: &[usize]) -> Option<Vec<f64>> {
        let n = self.num_vars();
        let vars: Vec<usize> = basic.iter().cloned().filter(|&l| l < n).collect();
        let tight: Vec<usize> = nonbasic.iter().filter(|&&l| l >= n).map(|&l| l - n).collect();
        let mut x = vec![0.0; n];
        if vars.is_empty() {
            return Some(x);
        }
        if tight.len() != vars.len() {
            return None;
        }
        let k = vars.len();
        let mat = DMatrix::from_fn(k, k, |r, c| self.rows[tight[r]][vars[c]]);
        let rhs = DVector::from_iterator(k, tight.iter().map(|&r| self.rhs[r]));
        let sol = mat.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        for (c, &v) in vars.iter().enumerate() {
            x[v] = sol[c].max(0.0);
        }
        Some(x)
    }
}

/// Textbook minimum ratio with the smallest basic label breaking ties.
fn bland_ratio(a: &[Vec<f64>], b: &[f64], basic: &[usize], s: usize) -> Option<(usize, f64)> {
    let mut leave: Option<(usize, f64)> = None;
    for i in 0..a.len() {
        if a[i][s] > PIVOT_TOL {
            let ratio = b[i] / a[i][s];
            leave = match leave {
                Some((r, best)) if !(ratio < best - 1e-12 || (ratio <= best + 1e-12 && basic[i] < basic[r])) => {
                    Some((r, best))
                }
                _ => Some((i, ratio)),
            };
        }
    }
    leave
}

/// Two-pass ratio test: relax every bound by `HARRIS_TOL`, then take the
/// largest pivot among the rows within the relaxed minimum ratio.
fn harris_ratio(a: &[Vec<f64>], b: &[f64], s: usize) -> Option<(usize, f64)> {
    let relaxed = (0..a.len())
        .filter(|&i| a[i][s] > PIVOT_TOL)
        .map(|i| (b[i] + HARRIS_TOL) / a[i][s])
        .fold(f64::INFINITY, f64::min);
    if relaxed.is_infinite() {
        return None;
    }
    (0..a.len())
        .filter(|&i| a[i][s] > PIVOT_TOL && b[i] / a[i][s] <= relaxed)
        .max_by(|&i, &j| a[i][s].partial_cmp(&a[j][s]).unwrap())
        .map(|i| (i, (b[i] / a[i][s]).max(0.0)))
}

/// Same as [`LinearProgram::maximize`] but with free variables, split as
/// `x = x+ - x-`. With `bound = Some(r)` both parts are capped at `r`, which
/// keeps the split program bounded whenever `|x_k| <= r` holds on the
/// feasible set anyway.
pub fn maximize_free(objective: &[f64], rows: &[Vec<f64>], rhs: &[f64], bound: Option<f64>) -> Result<LpSolution> {
    let n = objective.len();
    let split = |v: &[f64]| -> Vec<f64> { v.iter().cloned().chain(v.iter().map(|x| -x)).collect() };
    let mut lp = LinearProgram::new(split(objective));
    for (row, &b) in rows.iter().zip(rhs) {
        lp.add_row(split(row), b);
    }
    if let Some(r) = bound {
        for k in 0..2 * n {
            let mut row = vec![0.0; 2 * n];
            row[k] = 1.0;
            lp.add_row(row, r);
        }
    }
    let mut sol = lp.maximize()?;
    sol.x = (0..n).map(|k| sol.x[k] - sol.x[k + n]).collect();
    Ok(sol)
}
