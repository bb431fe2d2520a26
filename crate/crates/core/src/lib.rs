//! Numerical laboratory for positive operators on finite sections of `l_q`.
//!
//! Operators are nonnegative matrices `T = (t_kl)` with `t_kl = <e_k*, T e_l>`
//! acting on `l_q^n`. The crate computes norms and norming vectors, tests for
//! invariant coordinate ideals, estimates Perron data and local spectral
//! radii, computes commutants and decides cone-constrained feasibility over
//! them, builds the explicit operators of the invariant-subspace
//! constructions, and samples random ensembles.

pub mod cli;
pub mod commutant;
pub mod constructions;
pub mod error;
pub mod ideals;
pub mod interchange;
pub mod lp;
pub mod norms;
pub mod operator;
pub mod sampler;
pub mod spectral;

pub use error::{Error, Result};
pub use operator::{CooOperator, GeneralVector, PositiveVector, SpaceConfig, TruncatedPositiveOperator};
