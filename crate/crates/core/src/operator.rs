//! Truncated positive operators on `E_n = span(e_0, ..., e_n)` inside `l_q`.
//!
//! An operator is stored as its dense `(n+1) x (n+1)` matrix, entry `(k, l)`
//! being `<e_k*, T e_l>`. The exponent `q` travels with the operator so that
//! norms and adjoints always agree on which space they live in.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL_ABS: f64 = 1e-10;
pub const DEFAULT_TOL_REL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20_000;
pub const DEFAULT_SEED: u64 = 0x5eed_c0de;

/// Largest dimension handled by the dense representation.
pub const MAX_DENSE_DIM: usize = 512;

/// Exponent and numeric tolerances of the ambient sequence space.
///
/// `q = +inf` is admitted only as the dual of `l_1` (the sup-norm), which
/// is what [`TruncatedPositiveOperator::adjoint`] produces for `q = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    #[serde(with = "exponent")]
    pub q: f64,
    #[serde(default = "default_tol_abs")]
    pub tol_abs: f64,
    #[serde(default = "default_tol_rel")]
    pub tol_rel: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Seed for randomized restarts in the iterative solvers.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_tol_abs() -> f64 {
    DEFAULT_TOL_ABS
}
fn default_tol_rel() -> f64 {
    DEFAULT_TOL_REL
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            q: 2.0,
            tol_abs: DEFAULT_TOL_ABS,
            tol_rel: DEFAULT_TOL_REL,
            max_iter: DEFAULT_MAX_ITER,
            seed: DEFAULT_SEED,
        }
    }
}

impl SpaceConfig {
    pub fn new(q: f64) -> Result<Self> {
        let cfg = SpaceConfig {
            q,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `l_q` with default tolerances. Panics on `q < 1`; use [`SpaceConfig::new`]
    /// for untrusted input.
    pub fn lq(q: f64) -> Self {
        Self::new(q).expect("exponent q must satisfy q >= 1")
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.is_nan() || self.q < 1.0 {
            return Err(Error::InvalidConfig(format!("q = {} must be >= 1", self.q)));
        }
        if !(self.tol_abs > 0.0 && self.tol_abs.is_finite()) {
            return Err(Error::InvalidConfig("tol_abs must be positive".into()));
        }
        if !(self.tol_rel > 0.0 && self.tol_rel.is_finite()) {
            return Err(Error::InvalidConfig("tol_rel must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be >= 1".into()));
        }
        Ok(())
    }

    pub fn is_sup_norm(&self) -> bool {
        self.q.is_infinite()
    }

    /// `q*` with `1/q + 1/q* = 1`.
    pub fn dual_exponent(&self) -> f64 {
        dual_exponent(self.q)
    }

    pub fn dual(&self) -> SpaceConfig {
        SpaceConfig {
            q: self.dual_exponent(),
            ..*self
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SpaceConfig { seed, ..self }
    }
}

pub fn dual_exponent(q: f64) -> f64 {
    if q == 1.0 {
        f64::INFINITY
    } else if q.is_infinite() {
        1.0
    } else {
        q / (q - 1.0)
    }
}

/// Serializes the exponent as a number, or as the string `"inf"` for the sup-norm.
pub(crate) mod exponent {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(q: &f64, s: S) -> Result<S::Ok, S::Error> {
        if q.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*q)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct ExpVisitor;
        impl<'de> Visitor<'de> for ExpVisitor {
            type Value = f64;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number >= 1 or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" | "infinity" => Ok(f64::INFINITY),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(ExpVisitor)
    }
}

/// Finite coordinate vector, possibly signed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeneralVector {
    coords: Vec<f64>,
}

impl GeneralVector {
    pub fn new(coords: Vec<f64>) -> Self {
        GeneralVector { coords }
    }

    pub fn zeros(dim: usize) -> Self {
        GeneralVector::new(vec![0.0; dim])
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        let mut coords = vec![0.0; dim];
        coords[k] = 1.0;
        GeneralVector::new(coords)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.coords
    }

    pub fn dot(&self, other: &GeneralVector) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(self.coords.iter().zip(&other.coords).map(|(a, b)| a * b).sum())
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &GeneralVector, b: f64) -> Result<GeneralVector> {
        check_dims(self.dim(), other.dim())?;
        Ok(GeneralVector::new(
            self.coords
                .iter()
                .zip(&other.coords)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }

    pub fn norm(&self, q: f64) -> f64 {
        crate::norms::vector_norm(&self.coords, q)
    }
}

impl From<PositiveVector> for GeneralVector {
    fn from(v: PositiveVector) -> Self {
        GeneralVector::new(v.coords)
    }
}

/// Element of the positive cone: every coordinate is `>= 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PositiveVector {
    coords: Vec<f64>,
}

impl PositiveVector {
    /// Values in `(-DEFAULT_TOL_ABS, 0)` are clamped to zero; anything more
    /// negative (or non-finite) is rejected.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(coords, DEFAULT_TOL_ABS)
    }

    pub fn with_tolerance(mut coords: Vec<f64>, tol: f64) -> Result<Self> {
        for (k, c) in coords.iter_mut().enumerate() {
            if !c.is_finite() {
                return Err(Error::Parse(format!("non-finite coordinate at {k}")));
            }
            if *c < 0.0 {
                if *c < -tol {
                    return Err(Error::Positivity {
                        row: k,
                        col: 0,
                        value: *c,
                    });
                }
                *c = 0.0;
            }
        }
        Ok(PositiveVector { coords })
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        let mut coords = vec![0.0; dim];
        coords[k] = 1.0;
        PositiveVector { coords }
    }

    pub fn ones(dim: usize) -> Self {
        PositiveVector {
            coords: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn norm(&self, q: f64) -> f64 {
        crate::norms::vector_norm(&self.coords, q)
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|&c| c == 0.0)
    }

    /// Coordinates with value above `tol`.
    pub fn support(&self, tol: f64) -> Vec<usize> {
        (0..self.dim()).filter(|&k| self.coords[k] > tol).collect()
    }

    pub fn to_general(&self) -> GeneralVector {
        GeneralVector::new(self.coords.clone())
    }
}

impl<'de> Deserialize<'de> for PositiveVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let coords = Vec::<f64>::deserialize(d)?;
        PositiveVector::new(coords).map_err(serde::de::Error::custom)
    }
}

/// `P_n T P_n` for a positive operator `T`, as an entrywise nonnegative matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPositiveOperator {
    entries: DMatrix<f64>,
    space: SpaceConfig,
}

impl TruncatedPositiveOperator {
    /// Validates squareness, finiteness and positivity. Entries in
    /// `(-tol_abs, 0)` are clamped to zero.
    pub fn new(mut entries: DMatrix<f64>, space: SpaceConfig) -> Result<Self> {
        space.validate()?;
        if entries.nrows() != entries.ncols() {
            return Err(Error::Dimension(format!(
                "operator matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.nrows() == 0 {
            return Err(Error::Dimension("operator dimension must be >= 1".into()));
        }
        let n = entries.nrows();
        for l in 0..n {
            for k in 0..n {
                let v = entries[(k, l)];
                if !v.is_finite() {
                    return Err(Error::Parse(format!("non-finite entry at ({k}, {l})")));
                }
                if v < 0.0 {
                    if v < -space.tol_abs {
                        return Err(Error::Positivity {
                            row: k,
                            col: l,
                            value: v,
                        });
                    }
                    entries[(k, l)] = 0.0;
                }
            }
        }
        Ok(TruncatedPositiveOperator { entries, space })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], space: SpaceConfig) -> Result<Self> {
        let n = rows.len();
        for (k, r) in rows.iter().enumerate() {
            if r.as_ref().len() != n {
                return Err(Error::Dimension(format!(
                    "row {k} has {} entries, expected {n}",
                    r.as_ref().len()
                )));
            }
        }
        let m = DMatrix::from_fn(n, n, |k, l| rows[k].as_ref()[l]);
        Self::new(m, space)
    }

    pub fn identity(dim: usize, space: SpaceConfig) -> Self {
        assert!(dim >= 1);
        TruncatedPositiveOperator {
            entries: DMatrix::identity(dim, dim),
            space,
        }
    }

    pub fn zeros(dim: usize, space: SpaceConfig) -> Self {
        assert!(dim >= 1);
        TruncatedPositiveOperator {
            entries: DMatrix::zeros(dim, dim),
            space,
        }
    }

    pub fn diagonal(diag: &[f64], space: SpaceConfig) -> Result<Self> {
        let n = diag.len();
        Self::new(
            DMatrix::from_fn(n, n, |k, l| if k == l { diag[k] } else { 0.0 }),
            space,
        )
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn space(&self) -> &SpaceConfig {
        &self.space
    }

    pub fn q(&self) -> f64 {
        self.space.q
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// `<e_k*, T e_l>`.
    pub fn entry(&self, k: usize, l: usize) -> f64 {
        self.entries[(k, l)]
    }

    pub fn with_space(&self, space: SpaceConfig) -> Self {
        TruncatedPositiveOperator {
            entries: self.entries.clone(),
            space,
        }
    }

    pub fn apply(&self, x: &GeneralVector) -> Result<GeneralVector> {
        check_dims(self.dim(), x.dim())?;
        let v = &self.entries * DVector::from_column_slice(x.as_slice());
        Ok(GeneralVector::new(v.as_slice().to_vec()))
    }

    /// Positive operators map the cone into itself.
    pub fn apply_positive(&self, x: &PositiveVector) -> Result<PositiveVector> {
        check_dims(self.dim(), x.dim())?;
        Ok(PositiveVector {
            coords: self.apply_slice(x.as_slice()),
        })
    }

    pub(crate) fn apply_slice(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for (l, &xl) in x.iter().enumerate() {
            if xl == 0.0 {
                continue;
            }
            for (k, o) in out.iter_mut().enumerate() {
                *o += self.entries[(k, l)] * xl;
            }
        }
        out
    }

    pub(crate) fn apply_transpose_slice(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|l| (0..n).map(|k| self.entries[(k, l)] * y[k]).sum())
            .collect()
    }

    /// Transpose, living on the dual space `l_{q*}`.
    pub fn adjoint(&self) -> Self {
        TruncatedPositiveOperator {
            entries: self.entries.transpose(),
            space: self.space.dual(),
        }
    }

    /// `P_m T P_m`: the leading `m x m` principal block.
    pub fn compress(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.dim() {
            return Err(Error::Dimension(format!(
                "compression size {m} outside 1..={}",
                self.dim()
            )));
        }
        Ok(TruncatedPositiveOperator {
            entries: self.entries.view((0, 0), (m, m)).into_owned(),
            space: self.space,
        })
    }

    /// Block diagonal `diag(T, lambda * I)` of size `target_dim`.
    pub fn extend_with_scalar_tail(&self, target_dim: usize, lambda: f64) -> Result<Self> {
        if target_dim < self.dim() {
            return Err(Error::Dimension(format!(
                "target dimension {target_dim} smaller than {}",
                self.dim()
            )));
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Positivity {
                row: self.dim(),
                col: self.dim(),
                value: lambda,
            });
        }
        let n = self.dim();
        let mut m = DMatrix::zeros(target_dim, target_dim);
        m.view_mut((0, 0), (n, n)).copy_from(&self.entries);
        for k in n..target_dim {
            m[(k, k)] = lambda;
        }
        Ok(TruncatedPositiveOperator {
            entries: m,
            space: self.space,
        })
    }

    /// The product `self * other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(TruncatedPositiveOperator {
            entries: &self.entries * &other.entries,
            space: self.space,
        })
    }

    pub fn sum(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(TruncatedPositiveOperator {
            entries: &self.entries + &other.entries,
            space: self.space,
        })
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::Positivity {
                row: 0,
                col: 0,
                value: c,
            });
        }
        Ok(TruncatedPositiveOperator {
            entries: &self.entries * c,
            space: self.space,
        })
    }

    pub fn power(&self, k: u32) -> Self {
        let mut acc = DMatrix::identity(self.dim(), self.dim());
        for _ in 0..k {
            acc = &acc * &self.entries;
        }
        TruncatedPositiveOperator {
            entries: acc,
            space: self.space,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0)
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension(format!("expected {expected}, found {found}")));
    }
    Ok(())
}

/// Coordinate-list positive operator for dimensions beyond the dense limit.
#[derive(Debug, Clone, PartialEq)]
pub struct CooOperator {
    dim: usize,
    triplets: Vec<(usize, usize, f64)>,
    space: SpaceConfig,
}

impl CooOperator {
    pub fn new(dim: usize, triplets: Vec<(usize, usize, f64)>, space: SpaceConfig) -> Result<Self> {
        space.validate()?;
        if dim == 0 {
            return Err(Error::Dimension("operator dimension must be >= 1".into()));
        }
        let mut kept = Vec::with_capacity(triplets.len());
        for (k, l, v) in triplets {
            if k >= dim || l >= dim {
                return Err(Error::Dimension(format!("triplet ({k}, {l}) outside dim {dim}")));
            }
            if !v.is_finite() {
                return Err(Error::Parse(format!("non-finite entry at ({k}, {l})")));
            }
            if v < -space.tol_abs {
                return Err(Error::Positivity {
                    row: k,
                    col: l,
                    value: v,
                });
            }
            if v > 0.0 {
                kept.push((k, l, v));
            }
        }
        Ok(CooOperator {
            dim,
            triplets: kept,
            space,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space(&self) -> &SpaceConfig {
        &self.space
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }

    pub fn apply(&self, x: &GeneralVector) -> Result<GeneralVector> {
        check_dims(self.dim, x.dim())?;
        let mut out = vec![0.0; self.dim];
        for &(k, l, v) in &self.triplets {
            out[k] += v * x.as_slice()[l];
        }
        Ok(GeneralVector::new(out))
    }

    /// Duplicate triplets are summed.
    pub fn to_dense(&self) -> Result<TruncatedPositiveOperator> {
        if self.dim > MAX_DENSE_DIM {
            return Err(Error::Unsupported(format!(
                "dense storage limited to dim {MAX_DENSE_DIM}, got {}",
                self.dim
            )));
        }
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(k, l, v) in &self.triplets {
            m[(k, l)] += v;
        }
        TruncatedPositiveOperator::new(m, self.space)
    }

    pub fn from_dense(t: &TruncatedPositiveOperator) -> Self {
        let n = t.dim();
        let mut triplets = Vec::new();
        for l in 0..n {
            for k in 0..n {
                let v = t.entry(k, l);
                if v > 0.0 {
                    triplets.push((k, l, v));
                }
            }
        }
        CooOperator {
            dim: n,
            triplets,
            space: *t.space(),
        }
    }
}
