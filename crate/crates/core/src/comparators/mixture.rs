//! Normal mixture outcome model fit by maximum likelihood (ECM).
//!
//! Treated units: `Y ~ N(β₀ᵀ + β₁ᵀS + γ′x, σ_T²)`. Control units mix
//! `N(β₀ᶜ + γ′x, σ_C²)` and `N(β₀ᶜ + β₁ᶜ + γ′x, σ_C²)` with weights `1 − e`
//! and `e`. The slope vector `γ` is shared by both arms.
//!
//! Parameter order: `(β₀ᵀ, β₁ᵀ, β₀ᶜ, β₁ᶜ, γ, log σ_T, log σ_C)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::logistic::{InverseLink, LINK};
use crate::sim::rng::mix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MIN_MASS: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct MixtureOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Absolute log-likelihood change that ends the iterations.
    pub tol: f64,
    pub seed: u64,
}

impl MixtureOptions {
    pub fn new(seed: u64) -> Self {
        MixtureOptions { restarts: 5, max_iter: 500, tol: 1e-8, seed }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MixtureFit {
    pub beta0_t: f64,
    pub beta1_t: f64,
    pub beta0_c: f64,
    pub beta1_c: f64,
    pub gamma: Vec<f64>,
    pub sigma_t: f64,
    pub sigma_c: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub se0: f64,
    pub se1: f64,
    pub cov01: f64,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the restart that produced the kept fit.
    pub best_restart: usize,
    pub failed_restarts: usize,
    #[serde(skip)]
    pub vcov: DMatrix<f64>,
}

impl MixtureFit {
    pub fn theta(&self) -> Vec<f64> {
        let mut t = vec![self.beta0_t, self.beta1_t, self.beta0_c, self.beta1_c];
        t.extend(&self.gamma);
        t.push(self.sigma_t.ln());
        t.push(self.sigma_c.ln());
        t
    }

    pub fn param_names(x_names: &[String]) -> Vec<String> {
        let mut v: Vec<String> = ["beta0_T", "beta1_T", "beta0_C", "beta1_C"].iter().map(|s| s.to_string()).collect();
        v.extend(x_names.iter().cloned());
        v.push("log_sigma_T".into());
        v.push("log_sigma_C".into());
        v
    }
}

/// Flattened view of the data the likelihood needs.
struct Problem<'a> {
    d: &'a Dataset,
    /// Index, S for treated units.
    treated: Vec<(usize, f64)>,
    /// Index, score for control units.
    control: Vec<(usize, f64)>,
    p: usize,
}

struct Params {
    b: [f64; 4],
    gamma: Vec<f64>,
    sigma_t: f64,
    sigma_c: f64,
}

impl Params {
    fn from_theta(theta: &[f64], p: usize) -> Params {
        Params {
            b: [theta[0], theta[1], theta[2], theta[3]],
            gamma: theta[4..4 + p].to_vec(),
            sigma_t: theta[4 + p].exp(),
            sigma_c: theta[5 + p].exp(),
        }
    }

    fn theta(&self) -> Vec<f64> {
        let mut t = self.b.to_vec();
        t.extend(&self.gamma);
        t.push(self.sigma_t.ln());
        t.push(self.sigma_c.ln());
        t
    }
}

fn log_normal(y: f64, m: f64, sigma: f64) -> f64 {
    let u = (y - m) / sigma;
    -0.5 * (LN_2PI + u * u) - sigma.ln()
}

/// Component log weights and log densities for a control unit.
fn control_terms(y: f64, e: f64, m0: f64, m1: f64, sigma: f64) -> (f64, f64) {
    let l0 = if e < 1.0 { (1.0 - e).ln() + log_normal(y, m0, sigma) } else { f64::NEG_INFINITY };
    let l1 = if e > 0.0 { e.ln() + log_normal(y, m1, sigma) } else { f64::NEG_INFINITY };
    (l0, l1)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl<'a> Problem<'a> {
    fn new(d: &'a Dataset, scores: &[f64]) -> Result<Self> {
        if scores.len() != d.n() {
            return Err(Error::Dimension(format!("{} scores for {} units", scores.len(), d.n())));
        }
        let mut treated = Vec::new();
        let mut control = Vec::new();
        for i in 0..d.n() {
            match d.s()[i] {
                Some(s) => treated.push((i, if s { 1.0 } else { 0.0 })),
                None => {
                    let e = scores[i];
                    if !(0.0..=1.0).contains(&e) {
                        return Err(Error::InvalidData(format!("score {e} outside [0, 1] for unit {}", i + 1)));
                    }
                    control.push((i, e));
                }
            }
        }
        let mass1: f64 = control.iter().map(|c| c.1).sum();
        let mass0 = control.len() as f64 - mass1;
        if mass0 <= MIN_MASS {
            return Err(Error::Degenerate(
                "control mixture component S=0 has no weight; beta0_C is unidentified".into(),
            ));
        }
        if mass1 <= MIN_MASS {
            return Err(Error::Degenerate(
                "control mixture component S=1 has no weight; beta1_C is unidentified".into(),
            ));
        }
        Ok(Problem { d, treated, control, p: d.xy().ncols() })
    }

    fn xg(&self, i: usize, gamma: &[f64]) -> f64 {
        let row = self.d.xy().row(i);
        row.iter().zip(gamma).map(|(a, b)| a * b).sum()
    }

    fn loglik(&self, theta: &[f64]) -> f64 {
        let pr = Params::from_theta(theta, self.p);
        let y = self.d.y();
        let mut ll = 0.0;
        for &(i, s) in &self.treated {
            let m = pr.b[0] + pr.b[1] * s + self.xg(i, &pr.gamma);
            ll += log_normal(y[i], m, pr.sigma_t);
        }
        for &(i, e) in &self.control {
            let base = pr.b[2] + self.xg(i, &pr.gamma);
            let (l0, l1) = control_terms(y[i], e, base, base + pr.b[3], pr.sigma_c);
            ll += log_sum_exp(l0, l1);
        }
        ll
    }

    /// Analytic gradient of the log-likelihood in the log-σ parametrization.
    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.p;
        let pr = Params::from_theta(theta, p);
        let y = self.d.y();
        let mut g = vec![0.0; 6 + p];
        let (vt, vc) = (pr.sigma_t * pr.sigma_t, pr.sigma_c * pr.sigma_c);
        for &(i, s) in &self.treated {
            let u = y[i] - pr.b[0] - pr.b[1] * s - self.xg(i, &pr.gamma);
            let dm = u / vt;
            g[0] += dm;
            g[1] += s * dm;
            for (k, x) in self.d.xy().row(i).iter().enumerate() {
                g[4 + k] += x * dm;
            }
            g[4 + p] += u * u / vt - 1.0;
        }
        for &(i, e) in &self.control {
            let base = pr.b[2] + self.xg(i, &pr.gamma);
            let (m0, m1) = (base, base + pr.b[3]);
            let (l0, l1) = control_terms(y[i], e, m0, m1, pr.sigma_c);
            let r = (l1 - log_sum_exp(l0, l1)).exp();
            let (u0, u1) = (y[i] - m0, y[i] - m1);
            let (d0, d1) = ((1.0 - r) * u0 / vc, r * u1 / vc);
            g[2] += d0 + d1;
            g[3] += d1;
            for (k, x) in self.d.xy().row(i).iter().enumerate() {
                g[4 + k] += x * (d0 + d1);
            }
            g[5 + p] += (1.0 - r) * (u0 * u0 / vc - 1.0) + r * (u1 * u1 / vc - 1.0);
        }
        g
    }

    /// Conditional maximization of the means given `σ`, then of `σ` given the means.
    fn m_step(&self, resp: &[f64], sigma_t: f64, sigma_c: f64) -> Result<Params> {
        let p = self.p;
        let k = 4 + p;
        let y = self.d.y();
        let mut xtx = DMatrix::<f64>::zeros(k, k);
        let mut xty = DVector::<f64>::zeros(k);
        let mut row = vec![0.0; k];
        let add = |row: &[f64], w: f64, yi: f64, xtx: &mut DMatrix<f64>, xty: &mut DVector<f64>| {
            if w == 0.0 {
                return;
            }
            for a in 0..k {
                if row[a] == 0.0 {
                    continue;
                }
                xty[a] += w * row[a] * yi;
                for b in 0..k {
                    xtx[(a, b)] += w * row[a] * row[b];
                }
            }
        };
        let (wt, wc) = (1.0 / (sigma_t * sigma_t), 1.0 / (sigma_c * sigma_c));
        for &(i, s) in &self.treated {
            row.iter_mut().for_each(|v| *v = 0.0);
            row[0] = 1.0;
            row[1] = s;
            for (j, x) in self.d.xy().row(i).iter().enumerate() {
                row[4 + j] = *x;
            }
            add(&row, wt, y[i], &mut xtx, &mut xty);
        }
        for (c, &(i, _)) in self.control.iter().enumerate() {
            row.iter_mut().for_each(|v| *v = 0.0);
            row[2] = 1.0;
            for (j, x) in self.d.xy().row(i).iter().enumerate() {
                row[4 + j] = *x;
            }
            add(&row, wc * (1.0 - resp[c]), y[i], &mut xtx, &mut xty);
            row[3] = 1.0;
            add(&row, wc * resp[c], y[i], &mut xtx, &mut xty);
        }
        let coef = xtx
            .cholesky()
            .ok_or_else(|| Error::Degenerate("mixture M-step normal equations are singular".into()))?
            .solve(&xty);
        let b = [coef[0], coef[1], coef[2], coef[3]];
        let gamma: Vec<f64> = coef.iter().skip(4).copied().collect();
        let mut sst = 0.0;
        for &(i, s) in &self.treated {
            let u = y[i] - b[0] - b[1] * s - self.xg(i, &gamma);
            sst += u * u;
        }
        let mut ssc = 0.0;
        for (c, &(i, _)) in self.control.iter().enumerate() {
            let base = b[2] + self.xg(i, &gamma);
            let (u0, u1) = (y[i] - base, y[i] - base - b[3]);
            ssc += (1.0 - resp[c]) * u0 * u0 + resp[c] * u1 * u1;
        }
        Ok(Params {
            b,
            gamma,
            sigma_t: (sst / self.treated.len() as f64).sqrt(),
            sigma_c: (ssc / self.control.len() as f64).sqrt(),
        })
    }

    fn responsibilities(&self, pr: &Params, resp: &mut [f64]) {
        let y = self.d.y();
        for (c, &(i, e)) in self.control.iter().enumerate() {
            let base = pr.b[2] + self.xg(i, &pr.gamma);
            let (l0, l1) = control_terms(y[i], e, base, base + pr.b[3], pr.sigma_c);
            resp[c] = (l1 - log_sum_exp(l0, l1)).exp();
        }
    }
}

struct Run {
    theta: Vec<f64>,
    trace: Vec<f64>,
    converged: bool,
}

fn y_scale(d: &Dataset) -> f64 {
    let n = d.n() as f64;
    let m = d.y().iter().sum::<f64>() / n;
    (d.y().iter().map(|y| (y - m).powi(2)).sum::<f64>() / n).sqrt().max(f64::MIN_POSITIVE)
}

fn em_run(pb: &Problem, mut resp: Vec<f64>, opts: &MixtureOptions) -> Result<Run> {
    let floor = 1e-6 * y_scale(pb.d);
    let (mut st, mut sc) = (1.0, 1.0);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut params = None;
    for _ in 0..opts.max_iter {
        let pr = pb.m_step(&resp, st, sc)?;
        if !(pr.sigma_t > floor && pr.sigma_c > floor) || pr.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("mixture variance collapsed".into()));
        }
        let ll = pb.loglik(&pr.theta());
        if !ll.is_finite() {
            return Err(Error::Degenerate("mixture log-likelihood is not finite".into()));
        }
        pb.responsibilities(&pr, &mut resp);
        st = pr.sigma_t;
        sc = pr.sigma_c;
        let done = trace.last().is_some_and(|&prev| (ll - prev).abs() < opts.tol);
        trace.push(ll);
        params = Some(pr);
        if done {
            converged = true;
            break;
        }
    }
    let pr = params.ok_or_else(|| Error::NotConverged { what: "mixture EM".into(), iterations: 0 })?;
    Ok(Run { theta: pr.theta(), trace, converged })
}

fn starting_responsibilities(pb: &Problem, restart: usize, seed: u64) -> Vec<f64> {
    if restart == 0 {
        return pb.control.iter().map(|c| c.1).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, restart as u64]));
    pb.control
        .iter()
        .map(|&(_, e)| {
            let e = e.clamp(1e-6, 1.0 - 1e-6);
            let noise: f64 = StandardNormal.sample(&mut rng);
            LINK.f((e / (1.0 - e)).ln() + noise)
        })
        .collect()
}

/// Observed information by central differences of the analytic gradient.
fn observed_information(pb: &Problem, theta: &[f64]) -> DMatrix<f64> {
    let k = theta.len();
    let mut h = DMatrix::zeros(k, k);
    for j in 0..k {
        let step = 1e-5 * theta[j].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += step;
        dn[j] -= step;
        let (gu, gd) = (pb.gradient(&up), pb.gradient(&dn));
        for i in 0..k {
            h[(i, j)] = -(gu[i] - gd[i]) / (2.0 * step);
        }
    }
    linalg::symmetrize(&h)
}

/// Fits the mixture with `scores` as the control-arm mixing weights.
pub fn fit_mixture(d: &Dataset, scores: &[f64], opts: &MixtureOptions) -> Result<MixtureFit> {
    let pb = Problem::new(d, scores)?;
    if opts.restarts == 0 {
        return Err(Error::InvalidData("mixture needs at least one start".into()));
    }
    let runs: Vec<Result<Run>> = (0..opts.restarts)
        .into_par_iter()
        .map(|k| em_run(&pb, starting_responsibilities(&pb, k, opts.seed), opts))
        .collect();
    let failed_restarts = runs.iter().filter(|r| r.is_err()).count();
    let mut best: Option<(usize, Run)> = None;
    let mut last_error = None;
    for (k, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                let better = best
                    .as_ref()
                    .is_none_or(|(_, b)| run.trace.last() > b.trace.last());
                if better {
                    best = Some((k, run));
                }
            }
            Err(e) => last_error = Some(e),
        }
    }
    let Some((best_restart, run)) = best else {
        return Err(last_error.unwrap_or_else(|| Error::Degenerate("every mixture start failed".into())));
    };
    let info = observed_information(&pb, &run.theta);
    let vcov = linalg::checked_inverse(&info, "mixture observed information")?;
    let vcov = linalg::symmetrize(&vcov);
    let k = run.theta.len();
    let mut c0 = DVector::zeros(k);
    c0[0] = 1.0;
    c0[2] = -1.0;
    let mut c1 = c0.clone();
    c1[1] = 1.0;
    c1[3] = -1.0;
    let v = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &vcov * b)[0];
    let pr = Params::from_theta(&run.theta, pb.p);
    Ok(MixtureFit {
        beta0_t: pr.b[0],
        beta1_t: pr.b[1],
        beta0_c: pr.b[2],
        beta1_c: pr.b[3],
        tau0: pr.b[0] - pr.b[2],
        tau1: pr.b[0] + pr.b[1] - pr.b[2] - pr.b[3],
        se0: v(&c0, &c0).max(0.0).sqrt(),
        se1: v(&c1, &c1).max(0.0).sqrt(),
        cov01: v(&c0, &c1),
        gamma: pr.gamma,
        sigma_t: pr.sigma_t,
        sigma_c: pr.sigma_c,
        loglik: *run.trace.last().expect("non-empty trace"),
        iterations: run.trace.len(),
        loglik_trace: run.trace,
        converged: run.converged,
        best_restart,
        failed_restarts,
        vcov,
    })
}
