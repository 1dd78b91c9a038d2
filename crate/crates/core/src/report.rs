//! Versioned JSON result records shared by all estimators.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::comparators::{MixtureFit, PswFit};
use crate::data::Dataset;
use crate::geepers::GeepersFit;
use crate::logistic::{score_design_names, LogisticFit, ScoreDiagnostics};
use crate::sim::runner::CI_MULTIPLIER;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub auc: f64,
    pub cv_auc: Option<f64>,
    pub distinct_scores: usize,
    /// Score model and (where iterative) the estimator itself converged.
    pub converged: bool,
    pub score_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub estimator: &'static str,
    pub tau0: f64,
    pub tau1: f64,
    pub se0: Option<f64>,
    pub se1: Option<f64>,
    pub cov01: Option<f64>,
    pub ci0: Option<[f64; 2]>,
    pub ci1: Option<[f64; 2]>,
    pub alpha: Vec<f64>,
    pub alpha_names: Vec<String>,
    /// Outcome-model coefficients (GEEPERS) or mixture parameters; empty for PSW.
    pub beta: Vec<f64>,
    pub beta_names: Vec<String>,
    /// Covariance of `(alpha, beta)` for GEEPERS, of `beta` for the mixture,
    /// of `(tau0, tau1)` for PSW.
    pub vcov: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
    pub details: serde_json::Value,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn interval(tau: f64, se: f64) -> [f64; 2] {
    [tau - CI_MULTIPLIER * se, tau + CI_MULTIPLIER * se]
}

fn diagnostics(score: &LogisticFit, diag: &ScoreDiagnostics, converged: bool) -> Diagnostics {
    Diagnostics {
        auc: diag.auc,
        cv_auc: diag.cv_auc,
        distinct_scores: diag.distinct_scores,
        converged: score.converged && converged,
        score_iterations: score.iterations,
    }
}

#[allow(clippy::too_many_arguments)]
fn base(
    estimator: &'static str,
    d: &Dataset,
    score: &LogisticFit,
    diag: &ScoreDiagnostics,
    converged: bool,
    tau: (f64, f64),
    se: Option<(f64, f64, f64)>,
    details: serde_json::Value,
) -> EstimateReport {
    EstimateReport {
        schema_version: SCHEMA_VERSION,
        estimator,
        tau0: tau.0,
        tau1: tau.1,
        se0: se.map(|s| s.0),
        se1: se.map(|s| s.1),
        cov01: se.map(|s| s.2),
        ci0: se.map(|s| interval(tau.0, s.0)),
        ci1: se.map(|s| interval(tau.1, s.1)),
        alpha: score.alpha.clone(),
        alpha_names: score_design_names(d),
        beta: Vec::new(),
        beta_names: Vec::new(),
        vcov: Vec::new(),
        diagnostics: diagnostics(score, diag, converged),
        details,
    }
}

pub fn geepers_report(d: &Dataset, fit: &GeepersFit, diag: &ScoreDiagnostics) -> EstimateReport {
    let e = fit.effects;
    let m = fit.stratum_means();
    let details = serde_json::json!({
        "mode": fit.mode,
        "mu": { "c0": m.mu_c0, "c1": m.mu_c1, "t0": m.mu_t0, "t1": m.mu_t1 },
        "xbar_z1_s0": fit.xbar_s0,
        "xbar_z1_s1": fit.xbar_s1,
        "ols_sigma2": fit.ols.sigma2,
    });
    let mut r = base("geepers", d, &fit.logistic, diag, true, (e.tau0, e.tau1), Some((e.se0, e.se1, e.cov01)), details);
    r.beta = fit.ols.beta.clone();
    r.beta_names = fit.ols.names.clone();
    r.vcov = rows(&fit.vcov);
    r
}

pub fn psw_report(d: &Dataset, score: &LogisticFit, diag: &ScoreDiagnostics, fit: &PswFit) -> EstimateReport {
    let se = fit.se.as_ref().map(|s| (s.se0, s.se1, s.cov01));
    let details = serde_json::json!({
        "mu": { "c0_w": fit.mu_c0_w, "c1_w": fit.mu_c1_w, "t0": fit.mu_t0, "t1": fit.mu_t1 },
        "bootstrap": fit.se,
    });
    let mut r = base("psw", d, score, diag, true, (fit.tau0, fit.tau1), se, details);
    if let Some((s0, s1, c)) = se {
        r.vcov = vec![vec![s0 * s0, c], vec![c, s1 * s1]];
    }
    r
}

pub fn mixture_report(d: &Dataset, score: &LogisticFit, diag: &ScoreDiagnostics, fit: &MixtureFit) -> EstimateReport {
    let details = serde_json::json!({
        "sigma_t": fit.sigma_t,
        "sigma_c": fit.sigma_c,
        "loglik": fit.loglik,
        "iterations": fit.iterations,
        "best_restart": fit.best_restart,
        "failed_restarts": fit.failed_restarts,
    });
    let mut r = base(
        "mixture",
        d,
        score,
        diag,
        fit.converged,
        (fit.tau0, fit.tau1),
        Some((fit.se0, fit.se1, fit.cov01)),
        details,
    );
    r.beta = fit.theta();
    r.beta_names = MixtureFit::param_names(d.xy_names());
    r.vcov = rows(&fit.vcov);
    r
}
