//! Coherent direct multipath SLAM for distributed antenna arrays.
//!
//! This crate bundles three things that are usually kept apart:
//!
//! * a geometric multipath **simulator** (mirror-image surface features,
//!   uniform rectangular arrays, stacked frequency-domain snapshots),
//! * a particle-based belief-propagation **estimator** that fuses raw
//!   per-anchor observations through a nonzero-mean Type-II likelihood
//!   with moment-matched update messages and low-rank fast kernels,
//! * posterior Cramér–Rao **bounds** (coherent and noncoherent phase
//!   models) computed along the same trajectories for benchmarking.
//!
//! The crate is organised by subsystem: [`geometry`] holds the deterministic
//! scene math, [`channel`] the array responses and measurement synthesis,
//! [`priors`] the state-transition and birth densities, [`engine`] the filter
//! itself, [`fastmsg`] the Woodbury/determinant-lemma evaluation kernels,
//! [`crlb`] the bound machinery and [`harness`] the scenario configuration,
//! dataset generation, experiment driver and CLI.

pub mod channel;
pub mod crlb;
pub mod engine;
pub mod fastmsg;
pub mod geometry;
pub mod harness;
pub mod priors;
pub mod rngs;

pub use num_complex::Complex64;
