//! Monte-Carlo simulation harness.

pub mod cell;
pub mod dgp;
pub mod grid;
pub mod rng;
pub mod runner;

pub use cell::{ErrorDist, EstimatorSet, SimCell};
pub use dgp::{generate, generate_ci, SimTruth};
pub use grid::{GridSpec, Preset};
pub use runner::{run_cell, run_grid, Estimator, SimReport};
