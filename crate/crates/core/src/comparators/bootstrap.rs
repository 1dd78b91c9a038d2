//! Seeded case-resampling bootstrap, optionally resampling whole clusters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::sim::rng::mix;

pub const DEFAULT_REPLICATES: usize = 1000;

#[derive(Debug, Clone, Copy)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Resample the dataset's clusters instead of units.
    pub by_cluster: bool,
}

impl BootstrapOptions {
    pub fn new(replicates: usize, seed: u64) -> Self {
        BootstrapOptions { replicates, seed, by_cluster: false }
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapSummary {
    /// One statistic vector per replicate, in replicate order.
    pub draws: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    /// Sample covariance of the first two components (when there are two).
    pub cov01: Option<f64>,
    /// Resamples rejected by the statistic and redrawn.
    pub failures: usize,
}

fn resample(d: &Dataset, by_cluster: bool, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let n = d.n();
    if !by_cluster {
        return Ok((0..n).map(|_| rng.random_range(0..n)).collect());
    }
    let cluster = d
        .cluster()
        .ok_or_else(|| Error::InvalidData("cluster bootstrap requested but no cluster column".into()))?;
    let k = cluster.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); k];
    for (i, &c) in cluster.iter().enumerate() {
        members[c].push(i);
    }
    let mut rows = Vec::with_capacity(n);
    for _ in 0..k {
        rows.extend_from_slice(&members[rng.random_range(0..k)]);
    }
    Ok(rows)
}

/// Runs `stat` on `replicates` resamples. A resample on which `stat` fails is
/// redrawn; once the total number of failures reaches `replicates` the whole
/// bootstrap fails.
pub fn bootstrap<F>(d: &Dataset, opts: &BootstrapOptions, stat: F) -> Result<BootstrapSummary>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    let b = opts.replicates;
    if b < 2 {
        return Err(Error::InvalidData("bootstrap needs at least 2 replicates".into()));
    }
    if opts.by_cluster && d.cluster().is_none() {
        return Err(Error::InvalidData("cluster bootstrap requested but no cluster column".into()));
    }
    let results: Vec<Result<(Vec<f64>, usize)>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut failures = 0;
            loop {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(&[opts.seed, rep as u64, failures as u64]));
                let rows = resample(d, opts.by_cluster, &mut rng)?;
                match d.select_rows(&rows).and_then(|r| stat(&r)) {
                    Ok(v) => return Ok((v, failures)),
                    Err(e) => {
                        failures += 1;
                        if failures >= b {
                            return Err(e);
                        }
                    }
                }
            }
        })
        .collect();
    let mut draws = Vec::with_capacity(b);
    let mut failures = 0;
    let mut last_error = None;
    for r in results {
        match r {
            Ok((v, f)) => {
                failures += f;
                draws.push(v);
            }
            Err(e) => {
                failures += b;
                last_error = Some(e);
            }
        }
    }
    if failures >= b {
        let detail = last_error.map_or_else(String::new, |e| format!("; last error: {e}"));
        return Err(Error::Degenerate(format!(
            "bootstrap rejected {failures} resamples for {b} replicates{detail}"
        )));
    }
    let k = draws[0].len();
    if draws.iter().any(|v| v.len() != k) {
        return Err(Error::Dimension("bootstrap statistic changed length".into()));
    }
    let mean: Vec<f64> = (0..k).map(|j| draws.iter().map(|v| v[j]).sum::<f64>() / b as f64).collect();
    let cov = |a: usize, c: usize| {
        draws.iter().map(|v| (v[a] - mean[a]) * (v[c] - mean[c])).sum::<f64>() / (b as f64 - 1.0)
    };
    let se = (0..k).map(|j| cov(j, j).max(0.0).sqrt()).collect();
    let cov01 = (k >= 2).then(|| cov(0, 1));
    Ok(BootstrapSummary { draws, se, cov01, failures })
}
