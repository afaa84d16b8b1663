//! Generalized raking estimation for Cox proportional-hazards models in
//! two-phase validation designs with dependent covariate and failure-time
//! measurement error.
//!
//! Phase one observes cheap, error-prone variables (`X*`, `U*`, `Δ*`) on the
//! whole cohort; phase two validates a subsample with known inclusion
//! probabilities. The estimators here combine both phases:
//!
//! - [`calibration::ht_estimate`] — inverse-probability (Horvitz-Thompson)
//!   weighting of the validated subjects;
//! - [`calibration::raking_estimate`] — calibrates the design weights so
//!   phase-two totals of auxiliary variables match their known phase-one
//!   totals, for any auxiliary source:
//!   - [`calibration::build_auxiliary_naive`] — delta-beta influence of the
//!     error-prone full-cohort fit,
//!   - [`imputation::grmi_auxiliary`] — averages influence over multiple
//!     imputations of the event indicator,
//!   - [`imputation::fcsmi_auxiliary`] — chained (fully conditional)
//!     imputation of the event indicator, covariate, and follow-up time,
//!   - [`imputation::if_calibration_auxiliary`] — model-calibration fit of
//!     validated influence on imputed influence.
//!
//! The [`designs`] module draws validation samples (simple random,
//! case-control, balanced and Neyman-allocated stratified case-control), and
//! [`sim`] generates synthetic cohorts, applies configurable measurement
//! error, and benchmarks the estimators over replicated runs.
//!
//! Everything is deterministic given a master seed: see
//! [`numeric::RngStream`].
//!
//! Start with the runnable examples (`cargo run --example fit_cox`, etc.) or
//! the `twophase-raking` binary for the file-driven workflows.

pub mod calibration;
pub mod cli;
pub mod cohort;
pub mod cox;
pub mod designs;
pub mod error;
pub mod imputation;
pub mod io;
pub mod numeric;
pub mod sim;

pub use error::{Error, Result};
