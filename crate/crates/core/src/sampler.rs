//! Seeded random ensembles of positive contractions and frequency reports
//! for a few structural properties.
//!
//! These ensembles are not models of Baire-category typicality. "Typical"
//! in the category sense means "holds on a comeager set", which says nothing
//! about the measure of that set under any sampling scheme. The frequencies
//! here are exploratory statistics on finite matrices only.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ideals::{has_disjoint_column_supports, rt_criterion};
use crate::norms::{operator_norm, vector_norm};
use crate::operator::{GeneralVector, SpaceConfig, TruncatedPositiveOperator, MAX_DENSE_DIM};
use crate::spectral::orbit_norm_decay;

/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.959964;
pub const ORBIT_HORIZON: usize = 200;
pub const ORBIT_STARTS: usize = 5;
pub const ORBIT_THRESHOLD: f64 = 1e-6;
pub const NORM_ONE_TOL: f64 = 1e-3;

/// Nonzero entries are drawn from this range.
const ENTRY_RANGE: std::ops::Range<f64> = 0.01..1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Dense iid entries, divided by the operator norm.
    IidUniformRescaled,
    /// Dense iid entries with columns normalized to sum `damping`.
    ColumnStochasticDamped { damping: f64 },
    /// Entries with `|k - l| <= bandwidth` kept with probability `density`.
    SparseBand { density: f64, bandwidth: usize },
    /// Uniform random permutation matrices.
    Permutation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub dim: usize,
    #[serde(with = "crate::operator::exponent")]
    pub q: f64,
    pub kind: EnsembleKind,
    pub count: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        SpaceConfig::new(self.q)?;
        if self.count == 0 {
            return Err(Error::InvalidConfig("count must be >= 1".into()));
        }
        if self.dim == 0 || self.dim > MAX_DENSE_DIM {
            return Err(Error::InvalidConfig(format!("dim must be in 1..={MAX_DENSE_DIM}, got {}", self.dim)));
        }
        match self.kind {
            EnsembleKind::SparseBand { density, .. } if !(density > 0.0 && density <= 1.0) => {
                Err(Error::InvalidConfig(format!("density {density} outside (0, 1]")))
            }
            EnsembleKind::ColumnStochasticDamped { damping } if !(damping > 0.0 && damping <= 1.0) => {
                Err(Error::InvalidConfig(format!("damping {damping} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }

    fn space(&self) -> SpaceConfig {
        SpaceConfig::lq(self.q).with_seed(self.seed)
    }

    /// Generator for trial `t`: an independent stream of the seeded ChaCha
    /// generator, so trials can run in any order.
    pub fn trial_rng(&self, t: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t as u64);
        rng
    }

    /// Operator of trial `t`.
    pub fn sample_one(&self, t: usize) -> TruncatedPositiveOperator {
        self.sample_with(&mut self.trial_rng(t))
    }

    fn sample_with(&self, rng: &mut ChaCha8Rng) -> TruncatedPositiveOperator {
        let n = self.dim;
        let space = self.space();
        let entries = match self.kind {
            EnsembleKind::IidUniformRescaled => DMatrix::from_fn(n, n, |_, _| rng.gen_range(ENTRY_RANGE)),
            EnsembleKind::ColumnStochasticDamped { damping } => {
                let mut m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(ENTRY_RANGE));
                for mut col in m.column_iter_mut() {
                    let s = col.sum();
                    col *= damping / s;
                }
                m
            }
            EnsembleKind::SparseBand { density, bandwidth } => DMatrix::from_fn(n, n, |k, l| {
                if k.abs_diff(l) <= bandwidth && rng.gen_bool(density) {
                    rng.gen_range(ENTRY_RANGE)
                } else {
                    0.0
                }
            }),
            EnsembleKind::Permutation => {
                let mut perm: Vec<usize> = (0..n).collect();
                for k in (1..n).rev() {
                    perm.swap(k, rng.gen_range(0..=k));
                }
                DMatrix::from_fn(n, n, |k, l| if perm[l] == k { 1.0 } else { 0.0 })
            }
        };
        let t = TruncatedPositiveOperator::new(entries, space).expect("sampled entries are nonnegative");
        let norm = operator_norm(&t).value;
        let rescale = match self.kind {
            EnsembleKind::IidUniformRescaled => norm > 0.0,
            _ => norm > 1.0,
        };
        if rescale {
            t.scale(1.0 / norm).expect("positive scale")
        } else {
            t
        }
    }
}

/// All operators of the ensemble, in trial order.
pub fn sample(spec: &EnsembleSpec) -> Result<Vec<TruncatedPositiveOperator>> {
    spec.validate()?;
    Ok((0..spec.count).map(|t| spec.sample_one(t)).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    norm_eq_one: usize,
    irreducible: usize,
    diagonal_all_positive: usize,
    disjoint_column_supports: usize,
    orbit_decay_observed: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            norm_eq_one: self.norm_eq_one + o.norm_eq_one,
            irreducible: self.irreducible + o.irreducible,
            diagonal_all_positive: self.diagonal_all_positive + o.diagonal_all_positive,
            disjoint_column_supports: self.disjoint_column_supports + o.disjoint_column_supports,
            orbit_decay_observed: self.orbit_decay_observed + o.orbit_decay_observed,
        }
    }
}

fn trial_counts(spec: &EnsembleSpec, t: usize) -> Counts {
    let mut rng = spec.trial_rng(t);
    let op = spec.sample_with(&mut rng);
    let n = op.dim();
    let tol = op.space().tol_abs;
    let decays = (0..ORBIT_STARTS).all(|_| {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = vector_norm(&x, op.q());
        let x = GeneralVector::new(x.into_iter().map(|v| v / s).collect());
        let orbit = orbit_norm_decay(&op, &x, ORBIT_HORIZON).expect("dimensions match");
        orbit.iter().any(|&v| v < ORBIT_THRESHOLD)
    });
    let b = |v: bool| v as usize;
    Counts {
        norm_eq_one: b((operator_norm(&op).value - 1.0).abs() < NORM_ONE_TOL),
        irreducible: b(rt_criterion(&op).irreducible),
        diagonal_all_positive: b((0..n).all(|k| op.entry(k, k) > tol)),
        disjoint_column_supports: b(has_disjoint_column_supports(&op)),
        orbit_decay_observed: b(decays),
    }
}

/// Half-width of the 95% Wilson score interval.
pub fn wilson_radius(successes: usize, trials: usize) -> f64 {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    WILSON_Z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyFrequency {
    pub property: String,
    pub successes: usize,
    pub frequency: f64,
    pub radius: f64,
}

impl PropertyFrequency {
    fn new(property: &str, successes: usize, trials: usize) -> Self {
        PropertyFrequency {
            property: property.to_string(),
            successes,
            frequency: successes as f64 / trials as f64,
            radius: wilson_radius(successes, trials),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalityReport {
    pub spec: EnsembleSpec,
    pub trials: usize,
    pub properties: Vec<PropertyFrequency>,
}

impl TypicalityReport {
    pub fn get(&self, property: &str) -> Option<&PropertyFrequency> {
        self.properties.iter().find(|p| p.property == property)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("property,successes,trials,frequency,radius\n");
        for p in &self.properties {
            s.push_str(&format!(
                "{},{},{},{:e},{:e}\n",
                p.property, p.successes, self.trials, p.frequency, p.radius
            ));
        }
        s
    }
}

/// Runs every property check on every trial. `threads = None` uses the
/// available parallelism; the result does not depend on it.
pub fn typicality_report(spec: &EnsembleSpec, threads: Option<usize>) -> Result<TypicalityReport> {
    spec.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let totals = pool.install(|| {
        (0..spec.count)
            .into_par_iter()
            .map(|t| trial_counts(spec, t))
            .reduce(Counts::default, |a, b| a + b)
    });
    let n = spec.count;
    Ok(TypicalityReport {
        spec: *spec,
        trials: n,
        properties: vec![
            PropertyFrequency::new("norm_eq_one", totals.norm_eq_one, n),
            PropertyFrequency::new("irreducible", totals.irreducible, n),
            PropertyFrequency::new("diagonal_all_positive", totals.diagonal_all_positive, n),
            PropertyFrequency::new("disjoint_column_supports", totals.disjoint_column_supports, n),
            PropertyFrequency::new("orbit_decay_observed", totals.orbit_decay_observed, n),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::is_contraction;

    fn spec(kind: EnsembleKind, dim: usize, q: f64, count: usize) -> EnsembleSpec {
        EnsembleSpec { dim, q, kind, count, seed: 42 }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = spec(EnsembleKind::IidUniformRescaled, 2, 2.0, 3);
        assert_eq!(sample(&s).unwrap(), sample(&s).unwrap());
        let other = EnsembleSpec { seed: 43, ..s };
        assert_ne!(sample(&s).unwrap(), sample(&other).unwrap());
    }

    #[test]
    fn damped_column_stochastic_has_exact_norm() {
        let s = spec(EnsembleKind::ColumnStochasticDamped { damping: 0.9 }, 6, 1.0, 20);
        for t in sample(&s).unwrap() {
            assert!((operator_norm(&t).value - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_band_density_is_binomial() {
        let (n, bw, density) = (40, 3, 0.2);
        let s = spec(EnsembleKind::SparseBand { density, bandwidth: bw }, n, 2.0, 10);
        let mut slots = 0usize;
        let mut nonzero = 0usize;
        for t in sample(&s).unwrap() {
            for l in 0..n {
                for k in 0..n {
                    if k.abs_diff(l) <= bw {
                        slots += 1;
                        nonzero += (t.entry(k, l) > 0.0) as usize;
                    } else {
                        assert_eq!(t.entry(k, l), 0.0);
                    }
                }
            }
        }
        let mean = density * slots as f64;
        let sigma = (slots as f64 * density * (1.0 - density)).sqrt();
        assert!((nonzero as f64 - mean).abs() <= 3.0 * sigma, "{nonzero} vs {mean}");
    }

    #[test]
    fn every_sample_is_a_contraction() {
        for kind in [
            EnsembleKind::IidUniformRescaled,
            EnsembleKind::ColumnStochasticDamped { damping: 1.0 },
            EnsembleKind::SparseBand { density: 0.5, bandwidth: 2 },
            EnsembleKind::Permutation,
        ] {
            for q in [1.0, 1.5, 2.0, 3.0, f64::INFINITY] {
                for t in sample(&spec(kind, 5, q, 10)).unwrap() {
                    assert!(is_contraction(&t), "{kind:?} q={q}");
                }
            }
        }
    }

    #[test]
    fn report_examples() {
        let perm = typicality_report(&spec(EnsembleKind::Permutation, 5, 2.0, 30), Some(2)).unwrap();
        assert_eq!(perm.get("disjoint_column_supports").unwrap().frequency, 1.0);
        assert_eq!(perm.get("orbit_decay_observed").unwrap().frequency, 0.0);

        let dense = typicality_report(&spec(EnsembleKind::IidUniformRescaled, 4, 2.0, 30), Some(2)).unwrap();
        assert_eq!(dense.get("irreducible").unwrap().frequency, 1.0);
        assert_eq!(dense.get("norm_eq_one").unwrap().frequency, 1.0);

        let damped = spec(EnsembleKind::ColumnStochasticDamped { damping: 0.9 }, 4, 1.0, 30);
        let damped = typicality_report(&damped, Some(2)).unwrap();
        assert_eq!(damped.get("orbit_decay_observed").unwrap().frequency, 1.0);
        for p in &damped.properties {
            assert!((0.0..=1.0).contains(&p.frequency));
        }
        assert_eq!(damped.to_csv().lines().count(), 6);
    }

    #[test]
    fn wilson_radius_scales_as_inverse_sqrt() {
        let ratio = wilson_radius(500, 1000) / wilson_radius(2000, 4000);
        assert!((ratio - 2.0).abs() < 0.01, "{ratio}");
        let s = spec(EnsembleKind::SparseBand { density: 0.3, bandwidth: 1 }, 4, 2.0, 100);
        let small = typicality_report(&s, Some(1)).unwrap();
        let large = typicality_report(&EnsembleSpec { count: 400, ..s }, Some(1)).unwrap();
        for (a, b) in small.properties.iter().zip(&large.properties) {
            if a.frequency > 0.1 && a.frequency < 0.9 {
                let r = a.radius / b.radius;
                assert!(r > 1.6 && r < 2.5, "{}: {r}", a.property);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(sample(&spec(EnsembleKind::IidUniformRescaled, 2, 2.0, 0)).is_err());
        assert!(sample(&spec(EnsembleKind::SparseBand { density: 0.0, bandwidth: 1 }, 2, 2.0, 1)).is_err());
        assert!(sample(&spec(EnsembleKind::IidUniformRescaled, 2, 0.5, 1)).is_err());
    }
}
