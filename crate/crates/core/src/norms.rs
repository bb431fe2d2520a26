//! `l_q -> l_q` operator norms of nonnegative matrices.
//!
//! For an entrywise nonnegative `T` we have `|T x| <= T |x|` coordinatewise,
//! so the supremum of `||T x||_q` over the unit sphere is attained on the
//! positive cone. `q = 1`, `q = 2` and the sup-norm have exact formulas
//! (max column sum, largest singular value, max row sum). Any other `q`
//! goes through the nonlinear power iteration
//!
//! ```text
//! x <- psi( T^t phi(T x) ),   phi(y) = y^(q-1),   psi(z) = z^(1/(q-1)) / ||.||_q
//! ```
//!
//! restricted to the cone, with a handful of positive restarts.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{PositiveVector, TruncatedPositiveOperator};

pub const POWER_RESTARTS: usize = 8;
pub const DEFAULT_GRID_RESOLUTION: usize = 10_000;
pub const MAX_EXPOSURE_DIM: usize = 6;

/// Relative gap below the norm within which a grid direction counts as norming.
pub const NEAR_NORMING_REL: f64 = 1e-4;
/// Radius (l_2 distance of l_2-normalized directions) of the cluster that
/// must contain every near-norming direction.
pub const CLUSTER_RADIUS: f64 = 0.25;

pub fn vector_norm(x: &[f64], q: f64) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return scale;
    }
    if q == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    let s: f64 = x.iter().map(|v| (v.abs() / scale).powf(q)).sum();
    scale * s.powf(1.0 / q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    ExactL1,
    ExactL2,
    ExactLinf,
    PowerMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormCertificate {
    pub value: f64,
    /// Positive unit vector with `||T witness||_q` equal to `value` up to round-off.
    pub witness: PositiveVector,
    pub method: NormMethod,
    pub iterations: usize,
    /// Last change of the iterate's value; zero for exact methods.
    pub residual: f64,
}

impl NormCertificate {
    pub fn converged(&self, tol_rel: f64) -> bool {
        self.residual <= tol_rel * self.value.max(1.0)
    }
}

pub fn operator_norm(t: &TruncatedPositiveOperator) -> NormCertificate {
    let q = t.q();
    if q == 1.0 {
        exact_l1(t)
    } else if q == 2.0 {
        exact_l2(t)
    } else if q.is_infinite() {
        exact_linf(t)
    } else {
        power_method_norm(t)
    }
}

/// The cone-restricted power iteration, run even where an exact formula
/// exists (`q = 1` reduces to the Hager step onto the heaviest column).
pub fn power_method_norm(t: &TruncatedPositiveOperator) -> NormCertificate {
    let q = t.q();
    if q == 1.0 {
        return hager_l1(t);
    }
    if q.is_infinite() {
        return exact_linf(t);
    }
    let n = t.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(t.space().seed);
    let mut best: Option<NormCertificate> = None;
    for restart in 0..POWER_RESTARTS {
        let start: Vec<f64> = if restart == 0 {
            vec![1.0; n]
        } else {
            (0..n).map(|_| rng.gen_range(0.05..1.0)).collect()
        };
        let cert = power_iterate(t, start);
        if best.as_ref().map_or(true, |b| cert.value > b.value) {
            best = Some(cert);
        }
    }
    best.expect("at least one restart")
}

fn normalize(mut x: Vec<f64>, q: f64) -> Vec<f64> {
    let s = vector_norm(&x, q);
    if s > 0.0 {
        for v in &mut x {
            *v /= s;
        }
    }
    x
}

fn power_iterate(t: &TruncatedPositiveOperator, start: Vec<f64>) -> NormCertificate {
    let q = t.q();
    let cfg = t.space();
    let mut x = normalize(start, q);
    let mut value = vector_norm(&t.apply_slice(&x), q);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let y = t.apply_slice(&x);
        let w: Vec<f64> = y.iter().map(|v| v.powf(q - 1.0)).collect();
        let z = t.apply_transpose_slice(&w);
        if z.iter().all(|&v| v == 0.0) {
            residual = 0.0;
            break;
        }
        let next = normalize(z.iter().map(|v| v.powf(1.0 / (q - 1.0))).collect(), q);
        let next_value = vector_norm(&t.apply_slice(&next), q);
        let change = (next_value - value).abs();
        // Linear convergence: the remaining error is about change / (1 - rate).
        let rate = if residual.is_finite() && residual > 0.0 { change / residual } else { 0.0 };
        let remaining = if rate < 1.0 { change / (1.0 - rate) } else { f64::INFINITY };
        residual = change;
        x = next;
        value = next_value;
        if remaining <= 1e-2 * cfg.tol_rel * value.max(1.0) || change <= 4.0 * f64::EPSILON * value {
            break;
        }
    }
    NormCertificate {
        value,
        witness: PositiveVector::new(x).expect("iterates stay in the cone"),
        method: NormMethod::PowerMethod,
        iterations,
        residual,
    }
}

fn column_sums(t: &TruncatedPositiveOperator) -> Vec<f64> {
    (0..t.dim()).map(|l| t.entries().column(l).sum()).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

fn exact_l1(t: &TruncatedPositiveOperator) -> NormCertificate {
    let sums = column_sums(t);
    let l = argmax(&sums);
    NormCertificate {
        value: sums[l],
        witness: PositiveVector::basis(t.dim(), l),
        method: NormMethod::ExactL1,
        iterations: 0,
        residual: 0.0,
    }
}

fn hager_l1(t: &TruncatedPositiveOperator) -> NormCertificate {
    let n = t.dim();
    let mut x = vec![1.0 / n as f64; n];
    let mut value = vector_norm(&t.apply_slice(&x), 1.0);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < t.space().max_iter {
        iterations += 1;
        // Subgradient of ||.||_1 at T x >= 0 is the all-ones vector.
        let z = t.apply_transpose_slice(&vec![1.0; n]);
        let l = argmax(&z);
        let next = PositiveVector::basis(n, l).as_slice().to_vec();
        let next_value = vector_norm(&t.apply_slice(&next), 1.0);
        residual = (next_value - value).abs();
        x = next;
        value = next_value;
        if residual <= t.space().tol_rel * value.max(1.0) {
            break;
        }
    }
    NormCertificate {
        value,
        witness: PositiveVector::new(x).expect("basis vector"),
        method: NormMethod::PowerMethod,
        iterations,
        residual,
    }
}

fn exact_linf(t: &TruncatedPositiveOperator) -> NormCertificate {
    let n = t.dim();
    let value = (0..n)
        .map(|k| t.entries().row(k).sum())
        .fold(0.0, f64::max);
    NormCertificate {
        value,
        witness: PositiveVector::ones(n),
        method: NormMethod::ExactLinf,
        iterations: 0,
        residual: 0.0,
    }
}

fn exact_l2(t: &TruncatedPositiveOperator) -> NormCertificate {
    let svd = t.entries().clone().svd(false, true);
    let k = argmax(svd.singular_values.as_slice());
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let v: Vec<f64> = v_t.row(k).iter().map(|c| c.abs()).collect();
    NormCertificate {
        value: svd.singular_values[k],
        witness: PositiveVector::new(normalize(v, 2.0)).expect("absolute values"),
        method: NormMethod::ExactL2,
        iterations: 0,
        residual: 0.0,
    }
}

/// `||T||_q <= 1` up to the operator's relative tolerance.
pub fn is_contraction(t: &TruncatedPositiveOperator) -> bool {
    operator_norm(t).value <= 1.0 + t.space().tol_rel
}

/// Positive functional `x*` with `||x*||_{q*} = <x*, x> = 1` for a positive
/// unit vector `x`.
pub fn norming_functional(x: &PositiveVector, q: f64) -> PositiveVector {
    let n = x.dim();
    let norm = x.norm(q);
    let coords: Vec<f64> = if q == 1.0 {
        x.as_slice()
            .iter()
            .map(|&v| if v > 0.0 { 1.0 / norm } else { 0.0 })
            .collect()
    } else if q.is_infinite() {
        let k = argmax(x.as_slice());
        let mut c = vec![0.0; n];
        c[k] = 1.0 / norm;
        c
    } else {
        x.as_slice()
            .iter()
            .map(|&v| (v / norm).powf(q - 1.0) / norm)
            .collect()
    };
    PositiveVector::new(coords).expect("nonnegative by construction")
}

/// `A + delta * R0` with `R0 x = <x0*, x> A x0`, where `x0` is a positive
/// norming vector of `A` and `x0*` its positive norming functional.
pub fn exposing_perturbation(a: &TruncatedPositiveOperator, delta: f64) -> Result<TruncatedPositiveOperator> {
    if a.is_zero() {
        return Err(Error::DegenerateInput("the zero operator has no norming direction".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Precondition(format!("delta = {delta} must be positive")));
    }
    let cert = operator_norm(a);
    if cert.value >= 1.0 {
        return Err(Error::Precondition(format!(
            "||A|| = {} must be < 1",
            cert.value
        )));
    }
    let build = |d: f64| -> TruncatedPositiveOperator {
        let x0 = &cert.witness;
        let f = norming_functional(x0, a.q());
        let ax0 = a.apply_slice(x0.as_slice());
        let n = a.dim();
        let r0 = DMatrix::from_fn(n, n, |k, l| ax0[k] * f.as_slice()[l]);
        TruncatedPositiveOperator::new(a.entries() + r0 * d, *a.space())
            .expect("sum of positive matrices")
    };
    let perturbed = build(delta);
    if operator_norm(&perturbed).value < 1.0 {
        return Ok(perturbed);
    }
    let (mut lo, mut hi) = (0.0, delta);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if operator_norm(&build(mid)).value < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::DeltaTooLarge {
        delta,
        max_admissible: lo,
    })
}

/// Points `w^(1/q)` for `w` on a uniform lattice of the probability simplex,
/// i.e. a grid of the positive part of the `l_q` unit sphere with at most
/// `resolution` points.
pub fn positive_sphere_grid(dim: usize, q: f64, resolution: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        return vec![vec![1.0]];
    }
    let count = |n: usize| -> f64 {
        // C(n + dim - 1, dim - 1)
        (1..dim).fold(1.0, |acc, i| acc * (n + i) as f64 / i as f64)
    };
    let mut n = 1;
    while count(n + 1) <= resolution as f64 {
        n += 1;
    }
    let mut out = Vec::new();
    let mut parts = vec![0usize; dim];
    compositions(n, 0, &mut parts, &mut |p| {
        let w: Vec<f64> = p.iter().map(|&c| c as f64 / n as f64).collect();
        let x: Vec<f64> = if q.is_infinite() {
            let m = w.iter().cloned().fold(0.0, f64::max);
            w.iter().map(|v| v / m).collect()
        } else {
            w.iter().map(|v| v.powf(1.0 / q)).collect()
        };
        out.push(x);
    });
    out
}

fn compositions(rest: usize, idx: usize, parts: &mut [usize], emit: &mut dyn FnMut(&[usize])) {
    if idx == parts.len() - 1 {
        parts[idx] = rest;
        emit(parts);
        return;
    }
    for c in 0..=rest {
        parts[idx] = c;
        compositions(rest - c, idx + 1, parts, emit);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExposureAnalysis {
    pub norm: f64,
    pub samples: usize,
    pub near_norming: usize,
    /// Largest distance from a near-norming direction to the certified witness.
    pub spread: f64,
    pub exposing: bool,
}

/// Grid heuristic for absolute exposure: sample the positive unit sphere,
/// keep directions with `||A x|| >= ||A|| (1 - NEAR_NORMING_REL)` and check
/// that they all lie within `CLUSTER_RADIUS` of the norming witness.
/// Only the positive cone is sampled, and a finite grid cannot certify
/// uniqueness; treat the verdict as evidence.
pub fn exposure_analysis(a: &TruncatedPositiveOperator, grid_resolution: usize) -> Result<ExposureAnalysis> {
    if a.dim() > MAX_EXPOSURE_DIM {
        return Err(Error::Unsupported(format!(
            "exposure grid limited to dim {MAX_EXPOSURE_DIM}, got {}",
            a.dim()
        )));
    }
    if a.is_zero() {
        return Err(Error::DegenerateInput("zero operator".into()));
    }
    let q = a.q();
    let cert = operator_norm(a);
    let dir = |x: &[f64]| normalize(x.to_vec(), 2.0);
    let anchor = dir(cert.witness.as_slice());
    let threshold = cert.value * (1.0 - NEAR_NORMING_REL);
    let mut grid = positive_sphere_grid(a.dim(), q, grid_resolution);
    grid.push(cert.witness.as_slice().to_vec());
    let mut near = 0;
    let mut spread: f64 = 0.0;
    for x in &grid {
        if vector_norm(&a.apply_slice(x), q) >= threshold {
            near += 1;
            let d = dir(x);
            let dist = d
                .iter()
                .zip(&anchor)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            spread = spread.max(dist);
        }
    }
    Ok(ExposureAnalysis {
        norm: cert.value,
        samples: grid.len(),
        near_norming: near,
        spread,
        exposing: spread <= CLUSTER_RADIUS,
    })
}

pub fn is_absolutely_exposing(a: &TruncatedPositiveOperator, grid_resolution: usize) -> Result<bool> {
    exposure_analysis(a, grid_resolution).map(|r| r.exposing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::SpaceConfig;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn op(rows: &[&[f64]], q: f64) -> TruncatedPositiveOperator {
        TruncatedPositiveOperator::from_rows(rows, SpaceConfig::lq(q)).unwrap()
    }

    #[test]
    fn vector_norm_examples() {
        assert_relative_eq!(vector_norm(&[3.0, 4.0], 2.0), 5.0);
        assert_relative_eq!(vector_norm(&[1.0, 1.0, 1.0], 1.0), 3.0);
        assert_relative_eq!(vector_norm(&[1.0, 1.0], 3.0), 2f64.powf(1.0 / 3.0), epsilon = 1e-15);
        assert_relative_eq!(vector_norm(&[-2.0, 1.0], f64::INFINITY), 2.0);
        assert_eq!(vector_norm(&[0.0, 0.0], 3.0), 0.0);
    }

    #[test]
    fn identity_has_unit_norm_for_every_q() {
        for q in [1.0, 1.5, 2.0, 3.0, f64::INFINITY] {
            let c = operator_norm(&TruncatedPositiveOperator::identity(3, SpaceConfig::lq(q)));
            assert_relative_eq!(c.value, 1.0, epsilon = 1e-12);
            assert_relative_eq!(c.witness.norm(q), 1.0, epsilon = 1e-12);
        }
        let c = operator_norm(&TruncatedPositiveOperator::identity(3, SpaceConfig::lq(1.0)));
        assert_eq!(c.witness, PositiveVector::basis(3, 0));
    }

    #[test]
    fn l2_example_matches_singular_value() {
        // [[1,1],[0,0]] has singular values sqrt(2) and 0.
        let c = operator_norm(&op(&[&[1.0, 1.0], &[0.0, 0.0]], 2.0));
        assert_eq!(c.method, NormMethod::ExactL2);
        assert_relative_eq!(c.value, 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn rank_one_l3_example() {
        // ||x y^t||_{q->q} = ||x||_q ||y||_{q*}: (2^(1/3)) (2^(2/3)) = 2.
        let c = operator_norm(&op(&[&[1.0, 1.0], &[1.0, 1.0]], 3.0));
        assert_eq!(c.method, NormMethod::PowerMethod);
        assert_relative_eq!(c.value, 2.0, max_relative = 1e-8);
        // Dense grid search on the positive sphere never beats it.
        let best = positive_sphere_grid(2, 3.0, 20_000)
            .iter()
            .map(|x| vector_norm(&[x[0] + x[1], x[0] + x[1]], 3.0))
            .fold(0.0, f64::max);
        assert!(best <= c.value + 1e-12);
        assert!(best >= c.value - 1e-6);
    }

    #[test]
    fn permutation_is_l1_isometry() {
        let c = operator_norm(&op(&[&[0.0, 1.0], &[1.0, 0.0]], 1.0));
        assert_eq!(c.value, 1.0);
        assert_eq!(c.method, NormMethod::ExactL1);
    }

    #[test]
    fn contraction_predicate() {
        assert!(is_contraction(&op(&[&[0.5, 0.0], &[0.0, 0.3]], 2.0)));
        assert!(!is_contraction(&op(&[&[2.0, 0.0], &[0.0, 2.0]], 2.0)));
        assert!(is_contraction(&op(&[&[0.0, 1.0], &[1.0, 0.0]], 3.0)));
    }

    #[test]
    fn power_method_agrees_with_exact_formulas() {
        let t = [&[0.2, 0.7, 0.1][..], &[0.4, 0.3, 0.9], &[0.6, 0.5, 0.2]];
        for q in [1.0, 2.0] {
            let a = op(&t, q);
            let exact = operator_norm(&a).value;
            let pm = power_method_norm(&a).value;
            assert!((exact - pm).abs() <= 1e-8 * exact.max(1.0), "q={q}: {exact} vs {pm}");
        }
    }

    #[test]
    fn norming_functional_is_dual_unit() {
        let x = PositiveVector::new(vec![0.6, 0.8]).unwrap();
        for q in [2.0, 3.0] {
            let x = PositiveVector::new(normalize(x.as_slice().to_vec(), q)).unwrap();
            let f = norming_functional(&x, q);
            let pairing: f64 = f.as_slice().iter().zip(x.as_slice()).map(|(a, b)| a * b).sum();
            assert_relative_eq!(pairing, 1.0, epsilon = 1e-12);
            assert_relative_eq!(f.norm(crate::operator::dual_exponent(q)), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn exposing_perturbation_diagonal_example() {
        let a = op(&[&[0.5, 0.0], &[0.0, 0.2]], 2.0);
        let p = exposing_perturbation(&a, 0.1).unwrap();
        assert_relative_eq!(p.entry(0, 0), 0.55, epsilon = 1e-12);
        assert_relative_eq!(p.entry(1, 1), 0.2, epsilon = 1e-12);
        assert!(p.entry(0, 1).abs() < 1e-12 && p.entry(1, 0).abs() < 1e-12);
        // ||A_delta x0|| = (1 + delta) ||A||.
        assert_relative_eq!(operator_norm(&p).value, 0.55, epsilon = 1e-10);
    }

    #[test]
    fn exposing_perturbation_errors() {
        let zero = TruncatedPositiveOperator::zeros(2, SpaceConfig::lq(2.0));
        assert!(matches!(exposing_perturbation(&zero, 0.1), Err(Error::DegenerateInput(_))));
        let a = op(&[&[0.5, 0.0], &[0.0, 0.2]], 2.0);
        // ||A_delta|| = 0.5 (1 + delta) reaches 1 at delta = 1.
        match exposing_perturbation(&a, 1.5) {
            Err(Error::DeltaTooLarge { max_admissible, .. }) => {
                assert!((max_admissible - 1.0).abs() < 1e-6, "{max_admissible}")
            }
            other => panic!("expected DeltaTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn exposure_examples() {
        for q in [1.0, 2.0, 3.0] {
            assert!(is_absolutely_exposing(&op(&[&[1.0, 0.0], &[0.0, 0.1]], q), DEFAULT_GRID_RESOLUTION).unwrap());
            let flat = op(&[&[0.5, 0.0], &[0.0, 0.5]], q);
            assert!(!is_absolutely_exposing(&flat, DEFAULT_GRID_RESOLUTION).unwrap());
            let fixed = exposing_perturbation(&flat, 0.1).unwrap();
            assert!(is_absolutely_exposing(&fixed, DEFAULT_GRID_RESOLUTION).unwrap(), "q={q}");
        }
        let big = TruncatedPositiveOperator::identity(7, SpaceConfig::lq(2.0));
        assert!(matches!(is_absolutely_exposing(&big, 100), Err(Error::Unsupported(_))));
    }

    #[test]
    fn grid_lies_on_positive_sphere() {
        for q in [1.0, 1.5, 3.0] {
            let g = positive_sphere_grid(3, q, 500);
            assert!(g.len() <= 500 && g.len() > 400);
            for x in g {
                assert_relative_eq!(vector_norm(&x, q), 1.0, epsilon = 1e-12);
            }
        }
    }

    fn random_op(v: &[f64], n: usize, q: f64) -> TruncatedPositiveOperator {
        TruncatedPositiveOperator::new(DMatrix::from_row_slice(n, n, v), SpaceConfig::lq(q)).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn witness_certifies_value(v in prop::collection::vec(0.0f64..1.0, 16), qi in 0usize..4) {
            let q = [1.0, 1.5, 2.0, 3.0][qi];
            let t = random_op(&v, 4, q);
            let c = operator_norm(&t);
            prop_assert!(c.value >= 0.0);
            let image = vector_norm(&t.apply_slice(c.witness.as_slice()), q);
            prop_assert!(image >= c.value - 1e-10);
        }

        #[test]
        fn norm_is_monotone(v in prop::collection::vec(0.0f64..1.0, 9), s in prop::collection::vec(0.0f64..1.0, 9), qi in 0usize..4) {
            let q = [1.0, 1.5, 2.0, 3.0][qi];
            let big = random_op(&v, 3, q);
            let small_entries: Vec<f64> = v.iter().zip(&s).map(|(a, b)| a * b).collect();
            let small = random_op(&small_entries, 3, q);
            prop_assert!(operator_norm(&small).value <= operator_norm(&big).value + 1e-8);
        }

        #[test]
        fn adjoint_has_same_norm(v in prop::collection::vec(0.01f64..1.0, 9), qi in 0usize..3) {
            let q = [1.5, 2.0, 3.0][qi];
            let t = random_op(&v, 3, q);
            let a = operator_norm(&t).value;
            let b = operator_norm(&t.adjoint()).value;
            prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0), "{} vs {}", a, b);
        }
    }
}
