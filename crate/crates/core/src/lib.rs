//! Randomization-based causal inference for strip-plot experiments.
//!
//! A strip-plot design lays `B` blocks out as `P x Q` arrays of units
//! and randomizes the levels of one factor over whole rows and the
//! other over whole columns, independently per block and axis. This
//! crate implements the potential-outcomes analysis of such designs:
//!
//! - [`design`]: the science table, treatment contrasts, mean
//!   summaries, and the additivity conditions;
//! - [`randomizer`]: reproducible assignment draws and observed-outcome
//!   extraction;
//! - [`estimators`]: the unbiased contrast estimator, the pooled
//!   conservative variance estimator, and normal-quantile intervals;
//! - [`variance`]: closed-form observed-outcome covariances, exact
//!   sampling variance, estimator bias, and the class of quadratic
//!   variance estimators with its minimax member;
//! - [`oracle`]: exhaustive enumeration of the randomization
//!   distribution on small designs, kept independent of the closed
//!   forms it cross-checks;
//! - [`sim`]: the Monte Carlo coverage study and its built-in outcome
//!   model;
//! - [`io`]: JSON and CSV formats for tables, assignments, and
//!   diagnostic matrices.
//!
//! Everything is a pure function over immutable inputs; parallel use
//! needs no synchronization.

pub mod design;
pub mod error;
pub mod estimators;
pub mod io;
pub mod matrix;
pub mod numeric;
pub mod oracle;
pub mod randomizer;
pub mod sim;
pub mod variance;

pub use error::{Error, Result};
