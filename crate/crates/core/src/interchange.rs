//! Matrix interchange JSON.
//!
//! ```json
//! {"dim": 2, "q": 2.0, "format": "dense", "entries": [[0.5, 0.0], [0.1, 0.3]]}
//! {"dim": 2, "q": 2.0, "format": "coo", "triplets": [[0, 0, 0.5], [1, 0, 0.1]]}
//! ```
//!
//! Dense rows are matrix rows, so `entries[k][l] = <e_k*, T e_l>`; a triplet
//! `[i, j, v]` is the entry in row `i`, column `j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{exponent, CooOperator, SpaceConfig, TruncatedPositiveOperator, MAX_DENSE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Dense,
    Coo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub dim: usize,
    #[serde(with = "exponent", default = "default_q")]
    pub q: f64,
    #[serde(default = "default_format")]
    pub format: MatrixFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplets: Option<Vec<(usize, usize, f64)>>,
}

fn default_q() -> f64 {
    2.0
}

fn default_format() -> MatrixFormat {
    MatrixFormat::Dense
}

impl MatrixFile {
    pub fn dense(t: &TruncatedPositiveOperator) -> Self {
        let n = t.dim();
        MatrixFile {
            dim: n,
            q: t.q(),
            format: MatrixFormat::Dense,
            entries: Some((0..n).map(|k| (0..n).map(|l| t.entry(k, l)).collect()).collect()),
            triplets: None,
        }
    }

    pub fn coo(t: &CooOperator) -> Self {
        MatrixFile {
            dim: t.dim(),
            q: t.space().q,
            format: MatrixFormat::Coo,
            entries: None,
            triplets: Some(t.triplets().to_vec()),
        }
    }

    pub fn into_coo(self, base: SpaceConfig) -> Result<CooOperator> {
        let space = SpaceConfig { q: self.q, ..base };
        match self.format {
            MatrixFormat::Coo => {
                let triplets = self
                    .triplets
                    .ok_or_else(|| Error::Parse("coo matrix without \"triplets\"".into()))?;
                CooOperator::new(self.dim, triplets, space)
            }
            MatrixFormat::Dense => {
                let t = self.into_operator(base)?;
                Ok(CooOperator::from_dense(&t))
            }
        }
    }

    pub fn into_operator(self, base: SpaceConfig) -> Result<TruncatedPositiveOperator> {
        let space = SpaceConfig { q: self.q, ..base };
        match self.format {
            MatrixFormat::Dense => {
                let rows = self
                    .entries
                    .ok_or_else(|| Error::Parse("dense matrix without \"entries\"".into()))?;
                if rows.len() != self.dim {
                    return Err(Error::Dimension(format!(
                        "\"dim\" is {} but {} rows given",
                        self.dim,
                        rows.len()
                    )));
                }
                if self.dim > MAX_DENSE_DIM {
                    return Err(Error::Unsupported(format!(
                        "dense storage limited to dim {MAX_DENSE_DIM}"
                    )));
                }
                TruncatedPositiveOperator::from_rows(&rows, space)
            }
            MatrixFormat::Coo => self.into_coo(base)?.to_dense(),
        }
    }
}

pub fn parse_operator(text: &str) -> Result<TruncatedPositiveOperator> {
    parse_operator_with(text, SpaceConfig::default())
}

/// Tolerances are taken from `base`; the exponent comes from the file.
pub fn parse_operator_with(text: &str, base: SpaceConfig) -> Result<TruncatedPositiveOperator> {
    let file: MatrixFile = serde_json::from_str(text)?;
    file.into_operator(base)
}

pub fn to_json(t: &TruncatedPositiveOperator) -> String {
    serde_json::to_string(&MatrixFile::dense(t)).expect("matrix serialization cannot fail")
}

impl Serialize for TruncatedPositiveOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixFile::dense(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for TruncatedPositiveOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = MatrixFile::deserialize(d)?;
        file.into_operator(SpaceConfig::default())
            .map_err(serde::de::Error::custom)
    }
}
