//! Continuous-time articulated pose forecasting.
//!
//! Motion dynamics are modeled as first- or second-order neural ODEs over raw
//! joint positions. A forecast is one initial-value solve that lands exactly
//! on every requested query time and terminates immediately after the last
//! one, so a pose can be predicted at any real-valued future time without
//! computing a dense grid first.
//!
//! The crate is organized along the pipeline:
//!
//! - [`pose`] — poses, sequences, skeletons, and query-time grids
//! - [`mlp`] — the learned dynamics network and its reverse-mode gradients
//! - [`ode`] — fixed-step and adaptive Runge–Kutta IVP solvers
//! - [`model`] — the order-1/order-2 forecasters and checkpoint I/O
//! - [`train`] — MPJPE loss, reverse accumulation through the solver, Adam
//! - [`data`] — synthetic kinematic data with an exact continuous-time oracle
//! - [`eval`] — per-horizon error tables and baseline predictors
//! - [`bench`] — anytime-query latency measurement

pub mod bench;
pub mod data;
mod error;
pub mod eval;
pub mod mlp;
pub mod model;
pub mod ode;
pub mod pose;
pub mod train;
pub mod util;

pub use error::{Error, Result};
