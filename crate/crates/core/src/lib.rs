//! Derivative-free simulation optimization with dynamic post-stratified
//! adaptive sampling.
//!
//! The crate implements a trust-region solver whose per-point sample sizes
//! are chosen by an adaptive stopping rule on the standard error of a
//! post-stratified estimator. Stratification structures are rebuilt at run
//! time from each evaluation's pilot sample, either with variance-minimizing
//! binary trees or with concomitant-variable boundaries solved by a
//! fixed-point iteration. A synthetic wake-model calibration benchmark and an
//! experiment harness with a CSV contract round out the library.

pub mod conv;
pub mod data;
pub mod error;
pub mod harness;
pub mod problem;
pub mod rng;
pub mod solver;
pub mod stats;
pub mod strata;
pub mod tree;
pub mod wake;

pub use data::{DataPoint, Dataset};
pub use error::{Error, Result};
pub use problem::{saa_estimate, AuxiliaryRecord, Problem, SaaEstimate};
pub use rng::{RandomStream, StreamKey};
pub use stats::RunningStats;
