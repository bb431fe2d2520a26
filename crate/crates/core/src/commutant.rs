//! Commutants of truncations and feasibility over the positive commutant cone.
//!
//! The commutant `{A : AT = TA}` is the nullspace of the linear map
//! `vec(A) -> vec(AT - TA)` on `dim^2` unknowns. Given an orthonormal basis
//! `B_1..B_r` of it, a positive commuting matrix is `A = sum c_m B_m` with
//! every entry of `A` nonnegative, which is a polyhedral cone in `c`.
//! All cone programs add the normalization `sum_kl a_kl <= dim`; the
//! `l_q` ball is not polyhedral, so witnesses are rescaled to `||A||_q <= 1`
//! afterwards and re-checked.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{maximize_free, LpSolution, LpStatus};
use crate::norms::{is_contraction, operator_norm};
use crate::operator::{PositiveVector, TruncatedPositiveOperator};
use crate::spectral::{local_radius, QuasinilpotenceVerdict};

pub const MAX_COMMUTANT_DIM: usize = 64;
/// Tolerance on every linear constraint of the cone programs.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Relative commutation residual accepted for witnesses.
pub const COMMUTATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CommutantBasis {
    pub dim: usize,
    /// Orthonormal (Frobenius) basis of the commutant.
    pub basis: Vec<DMatrix<f64>>,
    pub rank: usize,
}

impl Serialize for CommutantBasis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            dim: usize,
            rank: usize,
            basis: Vec<Vec<Vec<f64>>>,
        }
        let n = self.dim;
        Repr {
            dim: n,
            rank: self.rank,
            basis: self
                .basis
                .iter()
                .map(|b| (0..n).map(|k| (0..n).map(|l| b[(k, l)]).collect()).collect())
                .collect(),
        }
        .serialize(s)
    }
}

/// `||A T - T A||_F`.
pub fn commutation_residual(a: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    (a * t - t * a).norm()
}

/// Matrix of `vec(A) -> vec(AT - TA)` with column-major `vec`.
fn commutation_map(t: &DMatrix<f64>) -> DMatrix<f64> {
    let n = t.nrows();
    let idx = |k: usize, l: usize| k + l * n;
    let mut k_map = DMatrix::zeros(n * n, n * n);
    for l in 0..n {
        for k in 0..n {
            let row = idx(k, l);
            for m in 0..n {
                k_map[(row, idx(k, m))] += t[(m, l)];
                k_map[(row, idx(m, l))] -= t[(k, m)];
            }
        }
    }
    k_map
}

/// Nullspace of the commutation map from a full SVD; singular values below
/// `tol_rel * sigma_max` count as zero.
pub fn commutant_basis(t: &TruncatedPositiveOperator) -> Result<CommutantBasis> {
    let n = t.dim();
    if n > MAX_COMMUTANT_DIM {
        return Err(Error::Unsupported(format!(
            "commutant limited to dim {MAX_COMMUTANT_DIM}, got {n}"
        )));
    }
    let k_map = commutation_map(t.entries());
    let svd = k_map.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = t.space().tol_rel * sigma_max;
    let basis: Vec<DMatrix<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s <= cutoff)
        .map(|(i, _)| DMatrix::from_iterator(n, n, v_t.row(i).iter().cloned()))
        .collect();
    Ok(CommutantBasis {
        dim: n,
        rank: basis.len(),
        basis,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommutantConstraint {
    pub i: usize,
    pub j: usize,
    pub eta: f64,
    pub p: usize,
}

impl CommutantConstraint {
    pub fn new(i: usize, j: usize, eta: f64, p: usize) -> Self {
        CommutantConstraint { i, j, eta, p }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for (name, v) in [("i", self.i), ("j", self.j), ("p", self.p)] {
            if v >= dim {
                return Err(Error::Dimension(format!("index {name} = {v} outside dim {dim}")));
            }
        }
        if !(self.eta > 0.0) {
            return Err(Error::Precondition(format!("eta = {} must be positive", self.eta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStatus {
    pub lp: LpSolution,
    /// `<e_j*, A e_i>` at the optimum of the surrogate program.
    pub surrogate_value: f64,
    /// Same entry after rescaling the witness to `||A||_q <= 1`.
    pub rescaled_value: f64,
    pub truncation_dim: usize,
    pub commutant_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    pub witness: Option<TruncatedPositiveOperator>,
    pub certificate: SolverStatus,
}

/// Optimum of a cone program.
#[derive(Debug, Clone)]
pub struct ConeOptimum {
    pub value: f64,
    /// Maximizing positive commuting matrix (scaled by the mass normalization).
    pub matrix: DMatrix<f64>,
    pub lp: LpSolution,
}

/// The positive part of the commutant of `T`, ready for repeated programs.
#[derive(Debug, Clone)]
pub struct CommutantCone {
    t: TruncatedPositiveOperator,
    basis: CommutantBasis,
    /// `g[(idx(k,l), m)] = B_m[(k,l)]`.
    g: DMatrix<f64>,
}

impl CommutantCone {
    pub fn new(t: &TruncatedPositiveOperator) -> Result<Self> {
        let basis = commutant_basis(t)?;
        Ok(Self::from_basis(t, basis))
    }

    pub fn from_basis(t: &TruncatedPositiveOperator, basis: CommutantBasis) -> Self {
        let n = t.dim();
        let mut g = DMatrix::zeros(n * n, basis.rank);
        for (m, b) in basis.basis.iter().enumerate() {
            g.column_mut(m).copy_from_slice(b.as_slice());
        }
        CommutantCone {
            t: t.clone(),
            basis,
            g,
        }
    }

    pub fn operator(&self) -> &TruncatedPositiveOperator {
        &self.t
    }

    pub fn basis(&self) -> &CommutantBasis {
        &self.basis
    }

    fn entry_row(&self, k: usize, l: usize) -> Vec<f64> {
        let n = self.t.dim();
        self.g.row(k + l * n).iter().cloned().collect()
    }

    /// Maximizes `sum w * a_kl` over positive commuting `A` with
    /// `a_kl = 0` for every pair in `zero_entries` and `sum a_kl <= dim`.
    pub fn maximize(&self, weights: &[(usize, usize, f64)], zero_entries: &[(usize, usize)]) -> Result<ConeOptimum> {
        let n = self.t.dim();
        let r = self.basis.rank;
        let mut objective = vec![0.0; r];
        for &(k, l, w) in weights {
            for (o, g) in objective.iter_mut().zip(self.entry_row(k, l)) {
                *o += w * g;
            }
        }
        let mut rows = Vec::with_capacity(n * n + zero_entries.len() + 1);
        let mut rhs = Vec::with_capacity(rows.capacity());
        let mut mass = vec![0.0; r];
        for idx in 0..n * n {
            let row: Vec<f64> = self.g.row(idx).iter().cloned().collect();
            for (s, v) in mass.iter_mut().zip(&row) {
                *s += v;
            }
            if row.iter().any(|v| v.abs() > 1e-13) {
                rows.push(row.into_iter().map(|v| -v).collect());
                rhs.push(0.0);
            }
        }
        for &(k, l) in zero_entries {
            rows.push(self.entry_row(k, l));
            rhs.push(0.0);
        }
        rows.push(mass);
        rhs.push(n as f64);
        // Orthonormal basis: |c_m| <= ||A||_F <= sum a_kl <= dim, so the box
        // is redundant in exact arithmetic and only stops round-off rays.
        let lp = maximize_free(&objective, &rows, &rhs, Some(n as f64 + 1.0))?;
        if lp.status != LpStatus::Optimal {
            return Err(Error::Solver(format!("cone program ended with {:?}", lp.status)));
        }
        let coeffs = nalgebra::DVector::from_column_slice(&lp.x);
        let flat = &self.g * coeffs;
        let mut matrix = DMatrix::from_column_slice(n, n, flat.as_slice());
        let scale = matrix.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for v in matrix.iter_mut() {
            if *v < 0.0 {
                if *v < -FEASIBILITY_TOL * scale {
                    return Err(Error::Solver(format!("optimum has negative entry {v:e}")));
                }
                *v = 0.0;
            }
        }
        let value = weights.iter().map(|&(k, l, w)| w * matrix[(k, l)]).sum();
        Ok(ConeOptimum { value, matrix, lp })
    }

    pub fn f_set_membership(&self, c: &CommutantConstraint) -> Result<FeasibilityResult> {
        c.validate(self.t.dim())?;
        let opt = self.maximize(&[(c.j, c.i, 1.0)], &[(c.p, c.p)])?;
        let surrogate_value = opt.value;
        let mut witness = None;
        let mut rescaled_value = 0.0;
        if surrogate_value > FEASIBILITY_TOL {
            let mut a = TruncatedPositiveOperator::new(opt.matrix, *self.t.space())?;
            let norm = operator_norm(&a).value;
            if norm > 1.0 {
                a = a.scale(1.0 / norm)?;
            }
            rescaled_value = a.entry(c.j, c.i);
            self.check_witness(&a)?;
            witness = Some(a);
        }
        let feasible = witness.is_some() && rescaled_value >= c.eta - FEASIBILITY_TOL;
        Ok(FeasibilityResult {
            feasible,
            witness: if feasible { witness } else { None },
            certificate: SolverStatus {
                lp: opt.lp,
                surrogate_value,
                rescaled_value,
                truncation_dim: self.t.dim(),
                commutant_rank: self.basis.rank,
            },
        })
    }

    fn check_witness(&self, a: &TruncatedPositiveOperator) -> Result<()> {
        let res = commutation_residual(a.entries(), self.t.entries());
        let scale = self.t.frobenius_norm() * a.frobenius_norm();
        if res > COMMUTATION_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Solver(format!(
                "witness commutation residual {res:e} exceeds tolerance"
            )));
        }
        Ok(())
    }

    /// Heuristic search for a nonzero positive commuting `A` that may be
    /// quasinilpotent at `y`.
    ///
    /// A positive diagonal entry `a_jj` on the support of any `A^k y` rules
    /// quasinilpotence out, so the search looks for nonzero cone elements
    /// with zero diagonal on a support set, starting from `supp(y)` and
    /// growing it by the reachable coordinates of each rejected candidate.
    /// `None` is not a proof that no witness exists.
    pub fn aab_witness_search(&self, y: &PositiveVector, horizon: usize) -> Result<Option<TruncatedPositiveOperator>> {
        let n = self.t.dim();
        if y.dim() != n {
            return Err(Error::Dimension(format!("expected {n}, found {}", y.dim())));
        }
        if y.is_zero() {
            return Err(Error::DegenerateInput("y must be nonzero".into()));
        }
        let tol = self.t.space().tol_abs;
        let mut support: Vec<usize> = y.support(tol);
        let all: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|k| (0..n).map(move |l| (k, l, 1.0)))
            .collect();
        for _ in 0..n {
            let zeros: Vec<(usize, usize)> = support.iter().map(|&j| (j, j)).collect();
            let opt = self.maximize(&all, &zeros)?;
            if opt.value <= FEASIBILITY_TOL {
                return Ok(None);
            }
            let mut a = TruncatedPositiveOperator::new(opt.matrix, *self.t.space())?;
            let norm = operator_norm(&a).value;
            if norm > 1.0 {
                a = a.scale(1.0 / norm)?;
            }
            self.check_witness(&a)?;
            let est = local_radius(&a, y, horizon)?;
            if est.verdict == QuasinilpotenceVerdict::Inconclusive {
                return Ok(Some(a));
            }
            let mut grown = support.clone();
            let mut v = y.as_slice().to_vec();
            for _ in 0..n {
                v = a.apply_slice(&v);
                for (k, &x) in v.iter().enumerate() {
                    if x > tol && !grown.contains(&k) {
                        grown.push(k);
                    }
                }
            }
            grown.sort_unstable();
            if grown == support {
                return Ok(None);
            }
            support = grown;
        }
        Ok(None)
    }
}

/// Decides, on the truncation, whether some positive commuting `A` with
/// `||A||_q <= 1`, `<e_j*, A e_i> >= eta` and `<e_p*, A e_p> = 0` exists.
pub fn f_set_membership(t: &TruncatedPositiveOperator, c: &CommutantConstraint) -> Result<FeasibilityResult> {
    if !is_contraction(t) {
        return Err(Error::Precondition("T must be a contraction".into()));
    }
    c.validate(t.dim())?;
    CommutantCone::new(t)?.f_set_membership(c)
}

pub fn aab_witness_search(
    t: &TruncatedPositiveOperator,
    y: &PositiveVector,
    horizon: usize,
) -> Result<Option<TruncatedPositiveOperator>> {
    CommutantCone::new(t)?.aab_witness_search(y, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::SpaceConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op(n: usize, f: impl FnMut(usize, usize) -> f64) -> TruncatedPositiveOperator {
        TruncatedPositiveOperator::new(DMatrix::from_fn(n, n, f), SpaceConfig::default()).unwrap()
    }

    /// Exact rank of an integer matrix by fraction-free elimination.
    fn integer_rank(mut m: Vec<Vec<i128>>) -> usize {
        let rows = m.len();
        let cols = m[0].len();
        let mut rank = 0;
        let mut prev = 1i128;
        for col in 0..cols {
            let Some(p) = (rank..rows).find(|&r| m[r][col] != 0) else {
                continue;
            };
            m.swap(rank, p);
            for r in rank + 1..rows {
                for c in col + 1..cols {
                    m[r][c] = (m[rank][col] * m[r][c] - m[r][col] * m[rank][c]) / prev;
                }
                m[r][col] = 0;
            }
            prev = m[rank][col];
            rank += 1;
        }
        rank
    }

    #[test]
    fn identity_commutes_with_everything() {
        let b = commutant_basis(&TruncatedPositiveOperator::identity(3, SpaceConfig::default())).unwrap();
        assert_eq!(b.rank, 9);
    }

    #[test]
    fn distinct_diagonal_has_diagonal_commutant() {
        let t = op(4, |k, l| if k == l { 0.1 * (k + 1) as f64 } else { 0.0 });
        let b = commutant_basis(&t).unwrap();
        assert_eq!(b.rank, 4);
        for m in &b.basis {
            for k in 0..4 {
                for l in 0..4 {
                    if k != l {
                        assert!(m[(k, l)].abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn cyclic_permutation_commutant_matches_exact_oracle() {
        let n = 4;
        let t = op(n, |k, l| if k == (l + 1) % n { 1.0 } else { 0.0 });
        // Oracle: exact nullity of the integer commutation map.
        let k_map = commutation_map(t.entries());
        let ints: Vec<Vec<i128>> = (0..n * n)
            .map(|r| (0..n * n).map(|c| k_map[(r, c)].round() as i128).collect())
            .collect();
        let nullity = n * n - integer_rank(ints);
        assert_eq!(nullity, 4);
        assert_eq!(commutant_basis(&t).unwrap().rank, nullity);
    }

    #[test]
    fn basis_elements_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = op(5, |_, _| rng.gen_range(0.0..1.0));
        let b = commutant_basis(&t).unwrap();
        assert_eq!(b.rank, 5);
        for m in &b.basis {
            assert!(commutation_residual(m, t.entries()) <= COMMUTATION_TOL * t.frobenius_norm());
        }
    }

    #[test]
    fn rejects_large_dims() {
        let t = TruncatedPositiveOperator::identity(65, SpaceConfig::default());
        assert!(matches!(commutant_basis(&t), Err(Error::Unsupported(_))));
    }

    #[test]
    fn identity_f_set_example() {
        let t = TruncatedPositiveOperator::identity(3, SpaceConfig::default());
        let r = f_set_membership(&t, &CommutantConstraint::new(1, 0, 0.1, 0)).unwrap();
        assert!(r.feasible);
        let a = r.witness.unwrap();
        assert!(a.entry(0, 1) >= 0.1);
        assert!(a.entry(0, 0).abs() < FEASIBILITY_TOL);
        // The maximizer concentrates on the elementary matrix E_{0,1}.
        let other: f64 = a.entries().iter().sum::<f64>() - a.entry(0, 1);
        assert!(other.abs() < 1e-9, "{}", a.entries());
        assert!(crate::norms::is_contraction(&a));
    }

    #[test]
    fn f_set_precondition_and_index_errors() {
        let big = op(2, |_, _| 1.0);
        assert!(matches!(
            f_set_membership(&big, &CommutantConstraint::new(0, 1, 0.1, 0)),
            Err(Error::Precondition(_))
        ));
        let t = TruncatedPositiveOperator::identity(2, SpaceConfig::default());
        assert!(matches!(
            f_set_membership(&t, &CommutantConstraint::new(0, 2, 0.1, 0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rank_one_plus_shift_is_infeasible_above_maximum() {
        // T = s x y^t + eps I with strictly positive x, y.
        let x = [0.3, 0.5, 0.2];
        let y = [0.4, 0.1, 0.6];
        let t = op(3, |k, l| 0.8 * x[k] * y[l] + if k == l { 0.05 } else { 0.0 });
        let cone = CommutantCone::new(&t).unwrap();
        let c = CommutantConstraint::new(0, 1, 1e-3, 2);
        let r = cone.f_set_membership(&c).unwrap();
        let best = r.certificate.rescaled_value;
        let above = CommutantConstraint::new(0, 1, best + 1e-3, 2);
        assert!(!cone.f_set_membership(&above).unwrap().feasible);
    }

    #[test]
    fn aab_search_on_identity_finds_nilpotent_witness() {
        let t = TruncatedPositiveOperator::identity(3, SpaceConfig::default());
        let a = aab_witness_search(&t, &PositiveVector::basis(3, 0), 40).unwrap().unwrap();
        assert!(!a.is_zero());
        assert!(a.entry(0, 0).abs() < FEASIBILITY_TOL);
        let est = local_radius(&a, &PositiveVector::basis(3, 0), 40).unwrap();
        assert_eq!(est.verdict, QuasinilpotenceVerdict::Inconclusive);
    }

    #[test]
    fn aab_search_on_generic_positive_matrix_finds_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=4 {
            let t = op(n, |_, _| rng.gen_range(0.05..1.0)).scale(0.2).unwrap();
            for j in 0..n {
                let found = aab_witness_search(&t, &PositiveVector::basis(n, j), 40).unwrap();
                assert!(found.is_none(), "n={n} j={j}");
            }
        }
    }

    /// Identity with a_pp = 0 and a_ji >= eta: the elementary matrix E_{j,i}
    /// works iff (j, i) != (p, p).
    #[test]
    fn identity_feasibility_matches_elementary_oracle() {
        for n in 2..=4 {
            let t = TruncatedPositiveOperator::identity(n, SpaceConfig::default());
            let cone = CommutantCone::new(&t).unwrap();
            for i in 0..n {
                for j in 0..n {
                    for p in 0..n {
                        let expected = !(i == p && j == p);
                        let r = cone.f_set_membership(&CommutantConstraint::new(i, j, 0.5, p)).unwrap();
                        assert_eq!(r.feasible, expected, "n={n} i={i} j={j} p={p}");
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn f_set_is_monotone_in_eta(seed in any::<u64>(), eta in 0.01f64..0.5, frac in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 3;
            // block structure so the commutant is rich: diag of a random 2x2 and a scalar
            let b = [[rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5)], [rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5)]];
            let t = op(n, |k, l| if k < 2 && l < 2 { b[k][l] } else if k == l { 0.3 } else { 0.0 });
            let cone = CommutantCone::new(&t).unwrap();
            let c = CommutantConstraint::new(rng.gen_range(0..n), rng.gen_range(0..n), eta, rng.gen_range(0..n));
            let r = cone.f_set_membership(&c).unwrap();
            if r.feasible {
                let smaller = CommutantConstraint { eta: eta * frac.max(1e-3), ..c };
                prop_assert!(cone.f_set_membership(&smaller).unwrap().feasible);
            }
        }

        #[test]
        fn rank_invariant_under_permutation_conjugation(seed in any::<u64>(), zeros in prop::collection::vec(any::<bool>(), 16)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4;
            let t = op(n, |k, l| if zeros[k * n + l] { 0.0 } else { (rng.gen_range(1..4) as f64) * 0.25 });
            let mut perm: Vec<usize> = (0..n).collect();
            for k in (1..n).rev() {
                perm.swap(k, rng.gen_range(0..=k));
            }
            let pt = op(n, |k, l| t.entry(perm[k], perm[l]));
            prop_assert_eq!(commutant_basis(&t).unwrap().rank, commutant_basis(&pt).unwrap().rank);
        }
    }
}
