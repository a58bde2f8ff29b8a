//! Mixed human-robot surveillance: operator decision model, human factors,
//! ensemble quickest change detection, stochastic routing, decision support
//! for task durations, and a discrete-event simulator tying them together.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ddm;
pub mod decision_support;
pub mod detection;
pub mod error;
pub mod human_factors;
pub mod operator;
pub mod report;
pub mod routing;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod validation;

pub use error::{Error, Result};
pub use scenario::Scenario;
