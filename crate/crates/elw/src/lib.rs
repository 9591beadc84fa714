//! Two-sample empirical-likelihood weighted (ELW) estimation of average
//! treatment effects in randomized trials, with missing-outcome and
//! multiply robust variants, bootstrap/influence-function inference, and a
//! Monte Carlo simulation harness.

pub mod dataio;
pub mod el_core;
pub mod estimators;
pub mod inference;
pub mod models;
pub mod simlab;
