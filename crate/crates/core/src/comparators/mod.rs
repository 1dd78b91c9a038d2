//! Benchmark estimators: principal-score weighting and the normal mixture model.

pub mod bootstrap;
pub mod mixture;
pub mod psw;

pub use bootstrap::{bootstrap, BootstrapOptions, BootstrapSummary};
pub use mixture::{fit_mixture, MixtureFit, MixtureOptions};
pub use psw::{fit_psw, fit_psw_bootstrap, PswFit};
