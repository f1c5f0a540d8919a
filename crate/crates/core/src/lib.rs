//! Cognitive homeostatic agent: a hierarchy of homeostats that recall and
//! replay remembered trajectories of temporal traces, living in a small
//! grid world.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod error;
pub mod hierarchy;
pub mod homeostat;
pub mod memory;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod world;

pub use error::{Error, Result};
