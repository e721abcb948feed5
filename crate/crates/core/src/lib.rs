//! Finite mixtures of vine copula distributions fitted by ECM, with BIC-driven
//! model selection, posterior-probability deprivation ranking,
//! leave-one-variable-out importance and the SIMD domain-score arithmetic.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod dataio;
pub mod error;
pub mod marginals;
pub mod mixture;
pub mod numeric;
pub mod paircop;
pub mod ranking;
pub mod selection;
pub mod simdindex;
pub mod vine;

pub use error::{Error, Result};
