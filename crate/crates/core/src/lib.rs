//! Self-supervised dynamic networks: a split residual encoder whose main
//! branch filters are synthesized from the self-supervised branch, plus the
//! training regimes, distribution shifts and representation analyses used
//! to study it.

mod error;
pub mod analysis;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod regimes;
pub mod shifts;

pub use error::{Error, Result};
