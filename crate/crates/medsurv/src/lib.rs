//! Inference on median survival times in general factorial designs with
//! right-censored observations.
//!
//! The crate estimates group-specific median survival times via Kaplan–Meier
//! curves, studentizes contrasts of the medians with interval-based standard
//! deviation estimators, and tests linear hypotheses `H m = 0` with a
//! Wald-type statistic. P-values come either from the asymptotic chi-squared
//! limit or from a studentized permutation of the pooled sample. A simulation
//! engine reproduces type-1-error and power studies for factorial layouts.
//!
//! Module map:
//!
//! - [`survdata`] — right-censored observations, factorial layouts, CSV I/O
//! - [`estimator`] — Kaplan–Meier curves, quantile inversion, Nelson–Aalen variance
//! - [`variance`] — one-/two-sided interval standard-deviation estimators
//! - [`contrasts`] — contrast matrices, Kronecker products, projections, pseudoinverse
//! - [`wald`] — the Wald-type statistic and the asymptotic chi-squared test
//! - [`permutation`] — pooled-data permutation distribution and test
//! - [`simulation`] — survival distributions, censoring calibration, study engine

pub mod contrasts;
pub mod error;
pub mod estimator;
pub mod numeric;
pub mod permutation;
pub mod seeding;
pub mod simulation;
pub mod survdata;
pub mod variance;
pub mod wald;

pub use error::{Error, Result};
