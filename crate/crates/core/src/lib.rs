//! Fuel-minimal on/off thruster scheduling for a chaser spacecraft that must
//! stay inside a distance band around a target whose trajectory is given as
//! an ephemeris.
//!
//! The pipeline transcribes two-body dynamics with RK4 into a sparse NLP,
//! relaxes the on/off decisions (optionally tightened with a perspective
//! constraint), rounds them, and re-solves the fixed-schedule problem.

// Numeric kernels walk several parallel arrays by index, and `!(x > 0.0)`
// is used on purpose so that NaN fails the check.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod ephemeris_io;
pub mod pipeline;
pub mod solver;
pub mod transcription;

pub use dynamics::{State, TimeGrid, Trajectory, Vec3, MU_EARTH};
