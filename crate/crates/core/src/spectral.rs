//! Perron pairs, local spectral radius at a vector, orbit decay and the
//! eigenvalues of a truncation.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::vector_norm;
use crate::operator::{GeneralVector, PositiveVector, TruncatedPositiveOperator, MAX_DENSE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerronPair {
    pub value: f64,
    pub right_vector: PositiveVector,
    pub left_vector: PositiveVector,
    /// Max of `||T r - value r||_2` and `||T^t l - value l||_2`.
    pub residual: f64,
    pub iterations: usize,
}

struct Side {
    value: f64,
    vector: Vec<f64>,
    residual: f64,
    iterations: usize,
}

fn power_side(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>, tol_rel: f64, max_iter: usize) -> Side {
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut best = Side {
        value: 0.0,
        vector: x.clone(),
        residual: f64::INFINITY,
        iterations: 0,
    };
    for it in 1..=max_iter {
        let y = apply(&x);
        let value = vector_norm(&y, 2.0);
        let residual = y
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - value * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual < best.residual {
            best = Side {
                value,
                vector: x.clone(),
                residual,
                iterations: it,
            };
        }
        if residual <= tol_rel * value.max(1.0) {
            best.iterations = it;
            return best;
        }
        if value == 0.0 {
            break;
        }
        x = y.into_iter().map(|v| v / value).collect();
    }
    best.iterations = max_iter;
    best
}

/// Power iteration on `T` and `T^t` from the normalized all-ones vector.
///
/// Periodic matrices (e.g. `[[0, 1], [4, 0]]`) make the iterates oscillate
/// and produce [`Error::IterationLimit`]; shifting to `T + eps I` breaks the
/// period without moving the eigenvectors.
pub fn perron_pair(t: &TruncatedPositiveOperator) -> Result<PerronPair> {
    let n = t.dim();
    let cfg = t.space();
    let right = power_side(n, |x| t.apply_slice(x), cfg.tol_rel, cfg.max_iter);
    let left = power_side(n, |x| t.apply_transpose_slice(x), cfg.tol_rel, cfg.max_iter);
    let value = right.value;
    let residual = right.residual.max(left.residual);
    let pair = PerronPair {
        value,
        right_vector: PositiveVector::new(right.vector).expect("cone is invariant"),
        left_vector: PositiveVector::new(left.vector).expect("cone is invariant"),
        residual,
        iterations: right.iterations.max(left.iterations),
    };
    if residual <= cfg.tol_rel * value.max(1.0) {
        Ok(pair)
    } else {
        Err(Error::IterationLimit(Box::new(pair)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuasinilpotenceVerdict {
    NotQuasinilpotent,
    /// Finite data never certifies a vanishing liminf.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalRadiusEstimate {
    pub horizon: usize,
    /// `||A^k y||_q^(1/k)` for `k = 1..=horizon`.
    pub values: Vec<f64>,
    /// `max a_jj` over `j` in the support of `y`.
    pub lower_bound: f64,
    /// Number of trailing terms inspected for the empirical rule.
    pub tail_window: usize,
    pub tail_min: f64,
    pub verdict: QuasinilpotenceVerdict,
}

impl LocalRadiusEstimate {
    pub fn running_min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,value\n");
        for (k, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{},{:e}\n", k + 1, v));
        }
        s
    }
}

/// Estimates the local spectral radius of `A` at `y`.
///
/// `A^k y` is renormalized every step and its log-norm accumulated, so
/// superexponential decay over hundreds of steps does not underflow.
/// The verdict is `NotQuasinilpotent` when some `j` in the support of `y`
/// has `a_jj > tol_abs` (then `A^k y >= y_j a_jj^k e_j`) or when the last
/// `K/2` values all stay above `tol_abs`.
pub fn local_radius(a: &TruncatedPositiveOperator, y: &PositiveVector, horizon: usize) -> Result<LocalRadiusEstimate> {
    if y.dim() != a.dim() {
        return Err(Error::Dimension(format!("expected {}, found {}", a.dim(), y.dim())));
    }
    if y.is_zero() {
        return Err(Error::DegenerateInput("y must be nonzero".into()));
    }
    if horizon == 0 {
        return Err(Error::Precondition("horizon must be >= 1".into()));
    }
    let q = a.q();
    let tol = a.space().tol_abs;
    let lower_bound = y
        .support(tol)
        .into_iter()
        .map(|j| a.entry(j, j))
        .fold(0.0, f64::max);

    let y_norm = y.norm(q);
    let mut w: Vec<f64> = y.as_slice().iter().map(|v| v / y_norm).collect();
    let mut log_norm = y_norm.ln();
    let mut values = Vec::with_capacity(horizon);
    let mut dead = false;
    for k in 1..=horizon {
        if dead {
            values.push(0.0);
            continue;
        }
        let next = a.apply_slice(&w);
        let s = vector_norm(&next, q);
        if s == 0.0 {
            dead = true;
            values.push(0.0);
            continue;
        }
        log_norm += s.ln();
        w = next.into_iter().map(|v| v / s).collect();
        values.push((log_norm / k as f64).exp());
    }
    let tail_window = (horizon / 2).max(1);
    let tail_min = values[horizon - tail_window..]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let verdict = if lower_bound > tol || tail_min > tol {
        QuasinilpotenceVerdict::NotQuasinilpotent
    } else {
        QuasinilpotenceVerdict::Inconclusive
    };
    Ok(LocalRadiusEstimate {
        horizon,
        values,
        lower_bound,
        tail_window,
        tail_min,
        verdict,
    })
}

/// `(||T^n x||_q)` for `n = 1..=horizon`.
pub fn orbit_norm_decay(t: &TruncatedPositiveOperator, x: &GeneralVector, horizon: usize) -> Result<Vec<f64>> {
    if x.dim() != t.dim() {
        return Err(Error::Dimension(format!("expected {}, found {}", t.dim(), x.dim())));
    }
    let q = t.q();
    let mut v = x.as_slice().to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        v = t.apply_slice(&v);
        out.push(vector_norm(&v, q));
    }
    Ok(out)
}

/// Eigenvalues of the truncation (Schur-based, via nalgebra).
pub fn finite_spectrum(t: &TruncatedPositiveOperator) -> Result<Vec<Complex<f64>>> {
    if t.dim() > MAX_DENSE_DIM {
        return Err(Error::Unsupported(format!("dim {} exceeds {MAX_DENSE_DIM}", t.dim())));
    }
    Ok(t.entries().clone().complex_eigenvalues().iter().cloned().collect())
}

pub fn spectral_radius(t: &TruncatedPositiveOperator) -> Result<f64> {
    Ok(finite_spectrum(t)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn spectrum_to_csv(spectrum: &[Complex<f64>]) -> String {
    let mut s = String::from("re,im\n");
    for z in spectrum {
        s.push_str(&format!("{:e},{:e}\n", z.re, z.im));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::SpaceConfig;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn op(n: usize, q: f64, f: impl FnMut(usize, usize) -> f64) -> TruncatedPositiveOperator {
        TruncatedPositiveOperator::new(DMatrix::from_fn(n, n, f), SpaceConfig::lq(q)).unwrap()
    }

    #[test]
    fn shifted_symmetric_circulant() {
        let eps = 1e-3;
        let t = op(2, 2.0, |k, l| if k == l { eps } else { 2.0 });
        let p = perron_pair(&t).unwrap();
        assert_relative_eq!(p.value, 2.0 + eps, epsilon = 1e-10);
        for v in [&p.right_vector, &p.left_vector] {
            assert_relative_eq!(v.as_slice()[0], v.as_slice()[1], epsilon = 1e-8);
        }
    }

    #[test]
    fn diagonal_perron_pair() {
        let t = op(2, 2.0, |k, l| if k == l { [0.5, 0.3][k] } else { 0.0 });
        let p = perron_pair(&t).unwrap();
        assert_relative_eq!(p.value, 0.5, epsilon = 1e-8);
        assert!(p.right_vector.as_slice()[0] > 1.0 - 1e-8);
        assert!(p.right_vector.as_slice()[1] < 1e-7);
    }

    #[test]
    fn periodic_matrix_hits_iteration_limit() {
        let mut t = op(2, 2.0, |k, l| [[0.0, 1.0], [4.0, 0.0]][k][l]);
        let cfg = SpaceConfig {
            max_iter: 500,
            ..*t.space()
        };
        t = t.with_space(cfg);
        assert!(matches!(perron_pair(&t), Err(Error::IterationLimit(_))));
        let shifted = t.sum(&TruncatedPositiveOperator::identity(2, cfg).scale(0.1).unwrap()).unwrap();
        let p = perron_pair(&shifted).unwrap();
        assert_relative_eq!(p.value, 2.1, epsilon = 1e-7);
    }

    #[test]
    fn local_radius_diagonal() {
        let a = op(2, 2.0, |k, l| if k == l { [0.5, 0.3][k] } else { 0.0 });
        let r = local_radius(&a, &PositiveVector::basis(2, 0), 40).unwrap();
        assert!(r.values.iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert_eq!(r.lower_bound, 0.5);
        assert_eq!(r.verdict, QuasinilpotenceVerdict::NotQuasinilpotent);
    }

    #[test]
    fn local_radius_nilpotent() {
        // strictly upper triangular: e_l -> e_{l-1}
        let a = op(4, 2.0, |k, l| if k + 1 == l { 1.0 } else { 0.0 });
        let r = local_radius(&a, &PositiveVector::basis(4, 3), 10).unwrap();
        assert!(r.values[..3].iter().all(|&v| v > 0.0));
        assert!(r.values[3..].iter().all(|&v| v == 0.0));
        assert_eq!(r.lower_bound, 0.0);
        assert_eq!(r.verdict, QuasinilpotenceVerdict::Inconclusive);
    }

    #[test]
    fn local_radius_positive_diagonal_entry() {
        let a = op(3, 2.0, |k, l| match (k, l) {
            (1, 1) => 0.7,
            (0, 1) => 0.2,
            (2, 0) => 0.3,
            _ => 0.0,
        });
        let y = PositiveVector::new(vec![0.0, 1.0, 0.5]).unwrap();
        let r = local_radius(&a, &y, 80).unwrap();
        assert!(r.lower_bound >= 0.7);
        assert!(r.running_min() >= 0.7 - 1e-6);
        assert_eq!(r.verdict, QuasinilpotenceVerdict::NotQuasinilpotent);
    }

    #[test]
    fn local_radius_survives_long_horizons() {
        let a = op(2, 2.0, |k, l| if k == l { 1e-3 } else { 0.0 });
        let r = local_radius(&a, &PositiveVector::ones(2), 400).unwrap();
        assert_relative_eq!(*r.values.last().unwrap(), 1e-3, max_relative = 1e-2);
    }

    #[test]
    fn local_radius_rejects_zero() {
        let a = TruncatedPositiveOperator::identity(2, SpaceConfig::default());
        assert!(matches!(
            local_radius(&a, &PositiveVector::new(vec![0.0, 0.0]).unwrap(), 5),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn orbit_examples() {
        let d = op(1, 2.0, |_, _| 0.5);
        let o = orbit_norm_decay(&d, &GeneralVector::new(vec![2.0]), 5).unwrap();
        for (n, v) in o.iter().enumerate() {
            assert_relative_eq!(*v, 2.0 * 0.5f64.powi(n as i32 + 1), epsilon = 1e-15);
        }
        let perm = op(2, 2.0, |k, l| if k != l { 1.0 } else { 0.0 });
        let o = orbit_norm_decay(&perm, &GeneralVector::new(vec![3.0, 4.0]), 6).unwrap();
        assert!(o.iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn spectrum_examples() {
        let d = op(2, 2.0, |k, l| if k == l { [0.5, 0.3][k] } else { 0.0 });
        let mut s: Vec<f64> = finite_spectrum(&d).unwrap().iter().map(|z| z.re).collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(s[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(s[1], 0.5, epsilon = 1e-12);

        let c = op(4, 2.0, |k, l| if k == (l + 1) % 4 { 1.0 } else { 0.0 });
        let spec = finite_spectrum(&c).unwrap();
        assert_eq!(spec.len(), 4);
        for z in &spec {
            assert_relative_eq!(z.norm(), 1.0, epsilon = 1e-10);
            let z4 = z.powi(4);
            assert!((z4.re - 1.0).abs() < 1e-9 && z4.im.abs() < 1e-9);
        }

        let shift = op(4, 2.0, |k, l| if k + 1 == l { 1.0 } else { 0.0 });
        assert!(finite_spectrum(&shift).unwrap().iter().all(|z| z.norm() < 1e-6));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn perron_value_is_spectral_radius(n in 2usize..20, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = op(n, 2.0, |_, _| rng.gen_range(0.01..1.0));
            let p = perron_pair(&t).unwrap();
            let rho = spectral_radius(&t).unwrap();
            prop_assert!((p.value - rho).abs() <= 1e-6 * rho.max(1.0));
            prop_assert!(p.right_vector.as_slice().iter().all(|&v| v > 0.0));
            // local radius at the Perron vector is constant
            let r = local_radius(&t, &p.right_vector, 30).unwrap();
            for v in &r.values {
                prop_assert!((v - p.value).abs() <= 1e-7 * p.value.max(1.0));
            }
        }

        #[test]
        fn diagonal_chain_holds_pointwise(v in prop::collection::vec(0.0f64..1.0, 16), y in prop::collection::vec(0.0f64..1.0, 4), q in 1.0f64..3.0) {
            let a = op(4, q, |k, l| v[k * 4 + l]);
            let y = PositiveVector::new(y).unwrap();
            prop_assume!(!y.is_zero());
            let r = local_radius(&a, &y, 30).unwrap();
            let y_norm = y.norm(q);
            for j in y.support(1e-10) {
                let alpha = y.as_slice()[j];
                let ajj = a.entry(j, j);
                for (k, val) in r.values.iter().enumerate() {
                    let k = (k + 1) as i32;
                    // ||A^k y|| = val^k; compare in log space only when both sides are representable
                    let lhs = val.powi(k);
                    let rhs = alpha * ajj.powi(k);
                    prop_assert!(lhs >= rhs * (1.0 - 1e-9) - 1e-300, "k={} lhs={} rhs={} |y|={}", k, lhs, rhs, y_norm);
                }
            }
        }

        #[test]
        fn orbit_is_submultiplicative(v in prop::collection::vec(0.0f64..0.4, 9), x in prop::collection::vec(-1.0f64..1.0, 3), n in 1usize..6, m in 1usize..6) {
            let t = op(3, 2.0, |k, l| v[k * 3 + l]);
            let o = orbit_norm_decay(&t, &GeneralVector::new(x), n + m).unwrap();
            let tm = crate::norms::operator_norm(&t.power(m as u32)).value;
            prop_assert!(o[n + m - 1] <= o[n - 1] * tm + 1e-12);
        }
    }
}
