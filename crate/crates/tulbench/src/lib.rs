//! Benchmark pipeline for trajectory-user linking on location-based
//! check-in data.
//!
//! The pipeline turns raw check-in logs into calendar-bucketed
//! sub-trajectories ([`pipeline`]), reduces each sub-trajectory to a short
//! vector of venue IDs ([`encode`]), links trajectories to users with an
//! exact k-nearest-neighbor classifier over those vectors ([`classify`]),
//! and scores the linking under stratified cross-validation ([`evaluate`]).
//! [`analyze`] adds the surrounding experiment harness: synthetic corpora,
//! venue-overlap statistics, parameter sweeps, scaling and timing runs.
//!
//! The linking signal is deliberately simple: after first-appearance
//! relabeling, venues discovered late in a user's stream carry large dense
//! IDs, so the largest venue IDs of a sub-trajectory point sharply at the
//! user who discovered them. The crate exists to measure exactly how far
//! that signal goes.

pub mod analyze;
pub mod classify;
pub mod encode;
pub mod error;
pub mod evaluate;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
