//! Optimal consumption-investment toolkit for a two-security market.
//!
//! Four nested problems are solved in closed form, cross-verified against a
//! finite-difference HJB solver and Monte Carlo simulation:
//!
//! 1. terminal wealth only (constant optimal fraction),
//! 2. consumption with deterministic external income,
//! 3. consumption under proportional transaction costs (no-trade band),
//! 4. transaction costs plus a mandatory bequest at the horizon.
//!
//! Modules:
//! - [`model`] - parameters, validation, problem assembly, text config I/O
//! - [`closed_form`] - analytic value functions, controls, band geometry
//! - [`hjb_fd`] - finite-difference backward solver and residual scanner
//! - [`simulate`] - reproducible Monte Carlo under any policy
//! - [`verify`] - three-way agreement checks with machine-readable verdicts

pub mod closed_form;
pub mod error;
pub mod hjb_fd;
pub mod model;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
