//! Joint visibility-region recognition and channel estimation for
//! near-field XL-MIMO with a deep-unfolded, graph-feedback estimator.

// `!(x > 0.0)` is used on purpose so NaN fails validation; index loops mirror
// the math over several parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod dun;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gcn;
pub mod io;
pub mod linalg;
pub mod measurement;
pub mod metrics;
pub mod network;
pub mod prox;
pub mod prune;
pub mod seed;
pub mod train;

#[cfg(test)]
mod fixtures;

pub use error::{Error, Result};
pub use exec::Exec;
