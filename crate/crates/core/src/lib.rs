//! Constant-divergence landing simulation stack.
//!
//! A downward camera sees the optical flow field expand as a vehicle
//! descends; the flow divergence D = V_Z/Z couples vertical speed to
//! height, and holding it constant lands with exponentially decaying
//! height and speed. This crate implements the full loop around that
//! idea:
//!
//! - [`dynamics`]: double-integrator plant with exact ZOH stepping and
//!   the closed-form constant-divergence references;
//! - [`vision`]: synthetic pinhole feature tracks plus the size and
//!   flow-field divergence estimators;
//! - [`channel`]: the fitted delay/noise model of a real estimator;
//! - [`characterize`]: lag estimation, median prefilter, robust
//!   bisquare fits, residual statistics;
//! - [`control`]: P/PI laws, the exponential adaptive gain, and the
//!   two-phase landing machine;
//! - [`detect`]: lagged-covariance oscillation detector and DFT period
//!   identification;
//! - [`analysis`]: discrete-time stability toolkit (zeros, critical
//!   gain, characteristic roots, root locus, circle check);
//! - [`sim`]: the scenario runner and batch harness behind the CLI.
//!
//! Batch sweeps, root-locus grids, and lag-search anchors run on rayon
//! when the `parallel` feature (default) is enabled and fall back to
//! sequential iteration otherwise; results are identical either way.

pub mod analysis;
pub mod channel;
pub mod characterize;
pub mod control;
pub mod detect;
pub mod dynamics;
pub mod error;
pub mod par;
pub mod scenario;
pub mod sim;
pub mod vision;

pub use error::{Error, Result};
