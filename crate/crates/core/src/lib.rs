//! Principal stratification effects under one-way noncompliance, estimated by
//! stacking a logistic principal score model with an outcome regression on the
//! imputed stratum indicator.

pub mod comparators;
pub mod data;
pub mod error;
pub mod geepers;
pub mod linalg;
pub mod logistic;
pub mod ols;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
