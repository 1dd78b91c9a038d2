//! Replicate loop, aggregation and report output.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::comparators::{fit_mixture, fit_psw_bootstrap, BootstrapOptions, MixtureOptions};
use crate::error::{Error, Result};
use crate::geepers::{fit_geepers_with, A21Method};
use crate::logistic;
use crate::ols::Mode;
use crate::sim::cell::SimCell;
use crate::sim::dgp::generate;
use crate::sim::rng::{sub_seed, Purpose};

/// Half-width multiplier of the confidence intervals.
pub const CI_MULTIPLIER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Geepers,
    Mixture,
    Psw,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Geepers => "geepers",
            Estimator::Mixture => "mixture",
            Estimator::Psw => "psw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub tau0: f64,
    pub tau1: f64,
    pub se0: f64,
    pub se1: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub auc: Option<f64>,
    pub results: Vec<(Estimator, std::result::Result<Estimate, String>)>,
}

impl ReplicateRecord {
    pub fn get(&self, est: Estimator) -> Option<&Estimate> {
        self.results.iter().find(|(e, _)| *e == est).and_then(|(_, r)| r.as_ref().ok())
    }
}

fn selected(cell: &SimCell) -> Vec<Estimator> {
    let mut v = Vec::new();
    if cell.estimators.geepers {
        v.push(Estimator::Geepers);
    }
    if cell.estimators.mixture {
        v.push(Estimator::Mixture);
    }
    if cell.estimators.psw {
        v.push(Estimator::Psw);
    }
    v
}

/// Generates one dataset and fits every selected estimator on a shared score fit.
pub fn run_replicate(cell: &SimCell, rep: usize) -> ReplicateRecord {
    let wanted = selected(cell);
    let fail_all = |msg: String| ReplicateRecord {
        rep,
        auc: None,
        results: wanted.iter().map(|&e| (e, Err(msg.clone()))).collect(),
    };
    let d = match generate(cell, rep as u64) {
        Ok((d, _)) => d,
        Err(e) => return fail_all(format!("{}: {e}", e.code())),
    };
    let score = match logistic::fit_logistic(&d) {
        Ok(s) => s,
        Err(e) => return fail_all(format!("{}: {e}", e.code())),
    };
    let auc = logistic::in_sample_auc(&d, &score).ok();
    let cell_id = cell.id_hash();
    let results = wanted
        .iter()
        .map(|&est| {
            let r = match est {
                Estimator::Geepers => fit_geepers_with(&d, score.clone(), Mode::Plain, A21Method::Analytic).map(|g| {
                    Estimate { tau0: g.effects.tau0, tau1: g.effects.tau1, se0: g.effects.se0, se1: g.effects.se1 }
                }),
                Estimator::Psw => {
                    let seed = sub_seed(cell.seed, cell_id, rep as u64, Purpose::Bootstrap);
                    fit_psw_bootstrap(&d, &score, &BootstrapOptions::new(cell.boot_b, seed)).map(|f| {
                        let se = f.se.expect("bootstrap fills SEs");
                        Estimate { tau0: f.tau0, tau1: f.tau1, se0: se.se0, se1: se.se1 }
                    })
                }
                Estimator::Mixture => {
                    let seed = sub_seed(cell.seed, cell_id, rep as u64, Purpose::Mixture);
                    fit_mixture(&d, &score.fitted, &MixtureOptions::new(seed))
                        .map(|m| Estimate { tau0: m.tau0, tau1: m.tau1, se0: m.se0, se1: m.se1 })
                }
            };
            (est, r.map_err(|e| format!("{}: {e}", e.code())))
        })
        .collect();
    ReplicateRecord { rep, auc, results }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub n_ok: usize,
    pub mean: f64,
    pub bias: f64,
    /// Standard deviation of the estimates over replicates (population form).
    pub emp_se: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_se: f64,
    pub median_se: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Aggregates `(estimate, se)` pairs against `truth`.
pub fn metrics(pairs: &[(f64, f64)], truth: f64) -> Metrics {
    let n = pairs.len();
    let nf = n as f64;
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let var = pairs.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / nf;
    let mse = pairs.iter().map(|p| (p.0 - truth).powi(2)).sum::<f64>() / nf;
    let hits = pairs.iter().filter(|p| (p.0 - truth).abs() <= CI_MULTIPLIER * p.1).count();
    Metrics {
        n_ok: n,
        mean,
        bias: mean - truth,
        emp_se: var.sqrt(),
        rmse: mse.sqrt(),
        coverage: hits as f64 / nf,
        mean_se: pairs.iter().map(|p| p.1).sum::<f64>() / nf,
        median_se: median(pairs.iter().map(|p| p.1).collect()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub estimator: Estimator,
    pub estimand: &'static str,
    pub truth: f64,
    pub failures: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub cell: SimCell,
    pub tau0: f64,
    pub tau1: f64,
    pub mean_auc: f64,
    pub summaries: Vec<Summary>,
    /// First failure message per estimator, for diagnosis.
    pub failure_examples: Vec<(Estimator, String)>,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

impl SimReport {
    pub fn summary(&self, est: Estimator, estimand: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.estimator == est && s.estimand == estimand)
    }

    /// Replicate estimates of one estimand, failures dropped.
    pub fn estimates(&self, est: Estimator, estimand: &str) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.get(est))
            .map(|e| if estimand == "tau0" { (e.tau0, e.se0) } else { (e.tau1, e.se1) })
            .collect()
    }
}

pub fn aggregate(cell: &SimCell, records: Vec<ReplicateRecord>) -> SimReport {
    let (tau0, tau1) = cell.true_effects();
    let aucs: Vec<f64> = records.iter().filter_map(|r| r.auc).collect();
    let mean_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let mut summaries = Vec::new();
    let mut failure_examples = Vec::new();
    for est in selected(cell) {
        let failures = records.iter().filter(|r| r.get(est).is_none()).count();
        if let Some(msg) = records
            .iter()
            .find_map(|r| r.results.iter().find(|(e, res)| *e == est && res.is_err()).map(|(_, res)| res.clone()))
        {
            failure_examples.push((est, msg.unwrap_err()));
        }
        for (estimand, truth) in [("tau0", tau0), ("tau1", tau1)] {
            let pairs: Vec<(f64, f64)> = records
                .iter()
                .filter_map(|r| r.get(est))
                .map(|e| if estimand == "tau0" { (e.tau0, e.se0) } else { (e.tau1, e.se1) })
                .collect();
            summaries.push(Summary { estimator: est, estimand, truth, failures, metrics: metrics(&pairs, truth) });
        }
    }
    SimReport { cell: *cell, tau0, tau1, mean_auc, summaries, failure_examples, records }
}

pub fn run_cell(cell: &SimCell) -> Result<SimReport> {
    cell.validate()?;
    let records: Vec<ReplicateRecord> = (0..cell.reps).into_par_iter().map(|rep| run_replicate(cell, rep)).collect();
    for r in &records {
        for (est, res) in &r.results {
            if let Err(msg) = res {
                log::warn!("{} rep {}: {} failed: {msg}", cell.label(), r.rep, est.name());
            }
        }
    }
    Ok(aggregate(cell, records))
}

/// Runs every cell on a pool of `workers` threads (0 = rayon default).
/// Output does not depend on `workers`.
pub fn run_grid(cells: &[SimCell], workers: usize) -> Result<Vec<SimReport>> {
    for c in cells {
        c.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidData(format!("thread pool: {e}")))?;
    pool.install(|| cells.par_iter().map(run_cell).collect())
}

/// One tidy row per cell × estimator × estimand.
#[derive(Debug, Clone, Serialize)]
pub struct TidyRow {
    pub n: usize,
    pub alpha: f64,
    pub errdist: &'static str,
    pub beta1: f64,
    pub sx_int: bool,
    pub zx_int: bool,
    pub reps: usize,
    pub seed: u64,
    pub estimator: &'static str,
    pub estimand: &'static str,
    pub truth: f64,
    pub n_ok: usize,
    pub failures: usize,
    pub mean: f64,
    pub bias: f64,
    pub emp_se: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_se: f64,
    pub median_se: f64,
    pub mean_auc: f64,
}

pub fn tidy_rows(reports: &[SimReport]) -> Vec<TidyRow> {
    let mut rows = Vec::new();
    for r in reports {
        let c = &r.cell;
        for s in &r.summaries {
            let m = &s.metrics;
            rows.push(TidyRow {
                n: c.n,
                alpha: c.alpha,
                errdist: c.errdist.name(),
                beta1: c.beta1,
                sx_int: c.sz_interaction,
                zx_int: c.zx_interaction,
                reps: c.reps,
                seed: c.seed,
                estimator: s.estimator.name(),
                estimand: s.estimand,
                truth: s.truth,
                n_ok: m.n_ok,
                failures: s.failures,
                mean: m.mean,
                bias: m.bias,
                emp_se: m.emp_se,
                rmse: m.rmse,
                coverage: m.coverage,
                mean_se: m.mean_se,
                median_se: m.median_se,
                mean_auc: r.mean_auc,
            });
        }
    }
    rows
}

pub fn write_tidy_csv<W: Write>(reports: &[SimReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in tidy_rows(reports) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_json(reports: &[SimReport]) -> serde_json::Value {
    serde_json::json!({
        "schema_version": crate::report::SCHEMA_VERSION,
        "ci_multiplier": CI_MULTIPLIER,
        "cells": reports,
    })
}

/// Coverage laid out by residual distribution, interaction flags and β₁ (rows)
/// against α × estimator (columns). Each entry is `tau0 & tau1`.
pub fn coverage_table(reports: &[SimReport]) -> String {
    let mut alphas: Vec<f64> = reports.iter().map(|r| r.cell.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let ests = [Estimator::Geepers, Estimator::Mixture];
    let mut out = format!("{:<8} {:>4} {:>4} {:>5}", "resid", "X:Z", "X:S", "b1");
    for a in &alphas {
        for e in ests {
            out.push_str(&format!(" {:>11}", format!("{}@{a}", &e.name()[..3])));
        }
    }
    out.push('\n');
    let key = |r: &SimReport| (r.cell.errdist as u8, r.cell.zx_interaction, r.cell.sz_interaction, r.cell.beta1.to_bits());
    let mut keys: Vec<(u8, bool, bool, u64)> = reports.iter().map(key).collect();
    keys.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)).then(f64::from_bits(a.3).total_cmp(&f64::from_bits(b.3))));
    keys.dedup();
    let yn = |b: bool| if b { "Yes" } else { "No" };
    for k in keys {
        let (dist, zx, sx, b1) = k;
        let dist_name = if dist == 0 { "Normal" } else { "Uniform" };
        out.push_str(&format!("{:<8} {:>4} {:>4} {:>5}", dist_name, yn(zx), yn(sx), f64::from_bits(b1)));
        for &a in &alphas {
            let report = reports.iter().find(|r| key(r) == k && r.cell.alpha == a);
            for e in ests {
                let cov = |estimand| report.and_then(|r| r.summary(e, estimand)).map(|s| s.metrics.coverage);
                let v = match (cov("tau0"), cov("tau1")) {
                    (Some(c0), Some(c1)) => format!("{c0:.2} & {c1:.2}"),
                    _ => "-".into(),
                };
                out.push_str(&format!(" {v:>11}"));
            }
        }
        out.push('\n');
    }
    out
}
