//! Principal-score weighting: control-arm stratum means weighted by `1 − e` and `e`.

use serde::Serialize;

use crate::comparators::bootstrap::{bootstrap, BootstrapOptions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::logistic::{self, LogisticFit};

/// Weight mass below which a control pseudo-stratum counts as empty.
const MIN_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct PswSe {
    pub se0: f64,
    pub se1: f64,
    pub cov01: f64,
    pub replicates: usize,
    pub failures: usize,
    pub by_cluster: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PswFit {
    pub mu_c0_w: f64,
    pub mu_c1_w: f64,
    pub mu_t0: f64,
    pub mu_t1: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub se: Option<PswSe>,
}

/// Point estimates from scores over all units (control entries are used).
pub fn fit_psw(d: &Dataset, scores: &[f64]) -> Result<PswFit> {
    if scores.len() != d.n() {
        return Err(Error::Dimension(format!("{} scores for {} units", scores.len(), d.n())));
    }
    let (mut w0, mut w1, mut y0, mut y1) = (0.0, 0.0, 0.0, 0.0);
    let (mut t0, mut t1, mut n0, mut n1) = (0.0, 0.0, 0usize, 0usize);
    for i in 0..d.n() {
        let y = d.y()[i];
        match d.s()[i] {
            None => {
                let e = scores[i];
                if !(0.0..=1.0).contains(&e) {
                    return Err(Error::InvalidData(format!("score {e} outside [0, 1] for unit {}", i + 1)));
                }
                w0 += 1.0 - e;
                w1 += e;
                y0 += y * (1.0 - e);
                y1 += y * e;
            }
            Some(false) => {
                t0 += y;
                n0 += 1;
            }
            Some(true) => {
                t1 += y;
                n1 += 1;
            }
        }
    }
    if w0 <= MIN_MASS {
        return Err(Error::Degenerate("no weight mass in control pseudo-stratum S=0".into()));
    }
    if w1 <= MIN_MASS {
        return Err(Error::Degenerate("no weight mass in control pseudo-stratum S=1".into()));
    }
    let (mu_c0_w, mu_c1_w) = (y0 / w0, y1 / w1);
    let (mu_t0, mu_t1) = (t0 / n0 as f64, t1 / n1 as f64);
    Ok(PswFit {
        mu_c0_w,
        mu_c1_w,
        mu_t0,
        mu_t1,
        tau0: mu_t0 - mu_c0_w,
        tau1: mu_t1 - mu_c1_w,
        se: None,
    })
}

/// Point estimates from `score` plus bootstrap SEs; every resample refits the score model.
pub fn fit_psw_bootstrap(d: &Dataset, score: &LogisticFit, opts: &BootstrapOptions) -> Result<PswFit> {
    let mut fit = fit_psw(d, &score.fitted)?;
    let boot = bootstrap(d, opts, |r| {
        let s = logistic::fit_logistic(r)?;
        let f = fit_psw(r, &s.fitted)?;
        Ok(vec![f.tau0, f.tau1])
    })?;
    fit.se = Some(PswSe {
        se0: boot.se[0],
        se1: boot.se[1],
        cov01: boot.cov01.unwrap_or(0.0),
        replicates: opts.replicates,
        failures: boot.failures,
        by_cluster: opts.by_cluster,
    });
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn data(y: Vec<f64>, z: Vec<bool>, s: Vec<Option<bool>>) -> Dataset {
        let n = y.len();
        Dataset::new(y, z, s, DMatrix::zeros(n, 0), DMatrix::zeros(n, 0), vec![], vec![]).unwrap()
    }

    fn three_controls() -> Dataset {
        data(
            vec![5.0, 7.0, 1.0, 2.0, 3.0],
            vec![true, true, false, false, false],
            vec![Some(false), Some(true), None, None, None],
        )
    }

    #[test]
    fn weighted_means_by_hand() {
        let f = fit_psw(&three_controls(), &[0.0, 0.0, 0.2, 0.5, 0.8]).unwrap();
        assert!((f.mu_c1_w - 2.4).abs() < 1e-12);
        assert!((f.mu_c0_w - (0.8 + 1.0 + 0.6) / 1.5).abs() < 1e-12);
        assert_eq!((f.mu_t0, f.mu_t1), (5.0, 7.0));
        assert!((f.tau1 - (7.0 - 2.4)).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_give_control_mean() {
        let f = fit_psw(&three_controls(), &[0.9; 5]).unwrap();
        assert!((f.mu_c0_w - 2.0).abs() < 1e-12 && (f.mu_c1_w - 2.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_partition_gives_subgroup_means() {
        let f = fit_psw(&three_controls(), &[0.3, 0.3, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!((f.mu_c0_w, f.mu_c1_w), (2.0, 2.0));
        let f = fit_psw(&three_controls(), &[0.3, 0.3, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!((f.mu_c0_w, f.mu_c1_w), (1.0, 2.5));
    }

    #[test]
    fn zero_mass_is_an_error() {
        let d = three_controls();
        assert!(matches!(fit_psw(&d, &[0.5, 0.5, 1.0, 1.0, 1.0]), Err(Error::Degenerate(m)) if m.contains("S=0")));
        assert!(matches!(fit_psw(&d, &[0.5, 0.5, 0.0, 0.0, 0.0]), Err(Error::Degenerate(m)) if m.contains("S=1")));
        assert!(fit_psw(&d, &[0.5; 4]).is_err());
        assert!(fit_psw(&d, &[0.5, 0.5, 1.2, 0.5, 0.5]).is_err());
    }

    #[test]
    fn location_equivariance() {
        let d = three_controls();
        let shifted = data(
            d.y().iter().enumerate().map(|(i, y)| if d.z()[i] { *y } else { y + 10.0 }).collect(),
            d.z().to_vec(),
            d.s().to_vec(),
        );
        let scores = [0.0, 0.0, 0.2, 0.5, 0.8];
        let a = fit_psw(&d, &scores).unwrap();
        let b = fit_psw(&shifted, &scores).unwrap();
        assert!((b.mu_c0_w - a.mu_c0_w - 10.0).abs() < 1e-12);
        assert!((b.tau1 - a.tau1 + 10.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let cell = crate::sim::SimCell { n: 60, ..Default::default() };
        let (d, _) = crate::sim::generate(&cell, 0).unwrap();
        let s = logistic::fit_logistic(&d).unwrap();
        let opts = BootstrapOptions::new(50, 11);
        let a = fit_psw_bootstrap(&d, &s, &opts).unwrap();
        let b = fit_psw_bootstrap(&d, &s, &opts).unwrap();
        let (sa, sb) = (a.se.unwrap(), b.se.unwrap());
        assert_eq!((sa.se0, sa.se1), (sb.se0, sb.se1));
        assert!(sa.se1 > 0.0);
    }
}
