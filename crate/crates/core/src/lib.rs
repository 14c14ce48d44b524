//! Hybrid driving-stepping locomotion planning: terrain analysis, cost maps,
//! lattice search with learned heuristics, and a digital-twin simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod benchmark;
pub mod costmap;
pub mod error;
pub mod format;
pub mod grid;
pub mod heuristics;
pub mod mission;
pub mod planner;
pub mod robot;
pub mod scenario;
pub mod sim;
pub mod terrain;

pub use error::{Error, Result};
