//! Principal score model: logistic regression of `S` on `[1, X^S]`, fit on the
//! treatment arm by Newton/IRLS and extrapolated to every unit.
//!
//! Sign convention: `Ω_i = z_i (s_i − f(η_i)) X̃_i` is the log-likelihood score,
//! so `A₁₁ = Σ ∂Ω_i/∂α = −Σ z_i f′(η_i) X̃_i X̃_i′`. The same vectors make up the
//! meat blocks, so A and B always agree on sign.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Inverse link seam. Only the logistic link ships.
pub trait InverseLink {
    fn f(&self, eta: f64) -> f64;
    fn df(&self, eta: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Logit;

/// Keeps fitted probabilities strictly inside (0, 1).
const PROB_GUARD: f64 = 1e-15;

impl InverseLink for Logit {
    fn f(&self, eta: f64) -> f64 {
        let p = if eta >= 0.0 {
            1.0 / (1.0 + (-eta).exp())
        } else {
            let e = eta.exp();
            e / (1.0 + e)
        };
        p.clamp(PROB_GUARD, 1.0 - PROB_GUARD)
    }

    fn df(&self, eta: f64) -> f64 {
        let p = self.f(eta);
        p * (1.0 - p)
    }
}

pub const LINK: Logit = Logit;

#[derive(Debug, Clone, Copy)]
pub struct LogisticOptions {
    pub max_iter: usize,
    pub score_tol: f64,
    pub rel_deviance_tol: f64,
    /// Largest admissible |coefficient| on the standardized internal scale.
    pub separation_threshold: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            max_iter: 50,
            score_tol: 1e-8,
            rel_deviance_tol: 1e-10,
            separation_threshold: 30.0,
        }
    }
}

/// Fitted principal score model.
#[derive(Debug, Clone, Serialize)]
pub struct LogisticFit {
    /// Intercept followed by one slope per `X^S` column.
    pub alpha: Vec<f64>,
    /// Linear predictor for every unit.
    pub eta: Vec<f64>,
    /// `f(η_i)` for every unit, treated and control.
    pub fitted: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Deviance after each accepted Newton step, starting from the initial value.
    pub deviance_trace: Vec<f64>,
}

/// `X̃^S = [1, X^S]` for every unit.
pub fn score_design(d: &Dataset) -> DMatrix<f64> {
    let xs = d.xs();
    DMatrix::from_fn(d.n(), xs.ncols() + 1, |i, j| if j == 0 { 1.0 } else { xs[(i, j - 1)] })
}

pub fn score_design_names(d: &Dataset) -> Vec<String> {
    std::iter::once("(Intercept)".to_string())
        .chain(d.xs_names().iter().cloned())
        .collect()
}

fn deviance(x: &DMatrix<f64>, s: &[f64], a: &DVector<f64>) -> f64 {
    let eta = x * a;
    -2.0 * eta
        .iter()
        .zip(s)
        .map(|(&e, &si)| {
            // log(1 + exp(e)) computed stably
            let softplus = e.max(0.0) + (-e.abs()).exp().ln_1p();
            si * e - softplus
        })
        .sum::<f64>()
}

/// False for NaN, so a blown-up candidate is always rejected.
fn descends(new_dev: f64, dev: f64) -> bool {
    new_dev <= dev * (1.0 + 1e-14) + 1e-300
}

/// Newton fit on an explicit design (rows = fitting units, first column intercept).
/// Returns standardized-scale-free coefficients for `x`.
fn newton(
    x: &DMatrix<f64>,
    s: &[f64],
    names: &[String],
    opts: &LogisticOptions,
) -> Result<(DVector<f64>, bool, usize, Vec<f64>)> {
    let (n, p) = x.shape();
    // Standardize non-intercept columns internally.
    let mut mean = vec![0.0; p];
    let mut sd = vec![1.0; p];
    for j in 1..p {
        let col = x.column(j);
        let m = col.mean();
        let v = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        if v.sqrt() <= 1e-12 * (1.0 + m.abs()) {
            return Err(Error::RankDeficient {
                columns: vec![names[j].clone(), names[0].clone()],
            });
        }
        mean[j] = m;
        sd[j] = v.sqrt();
    }
    let xt = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { (x[(i, j)] - mean[j]) / sd[j] });
    linalg::check_full_rank(&xt, names)?;

    let sbar = s.iter().sum::<f64>() / n as f64;
    let mut a = DVector::zeros(p);
    a[0] = (sbar / (1.0 - sbar)).ln();
    let mut dev = deviance(&xt, s, &a);
    let mut trace = vec![dev];
    let mut converged = false;
    let mut iterations = 0;
    let mut stalls = 0;

    let score_info = |a: &DVector<f64>| {
        let eta = &xt * a;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for i in 0..n {
            let pi = LINK.f(eta[i]);
            let w = LINK.df(eta[i]);
            let row = xt.row(i);
            for j in 0..p {
                score[j] += (s[i] - pi) * row[j];
                for k in 0..=j {
                    info[(j, k)] += w * row[j] * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                info[(k, j)] = info[(j, k)];
            }
        }
        (score, info)
    };

    while iterations < opts.max_iter {
        let (score, info) = score_info(&a);
        if score.amax() < opts.score_tol {
            converged = true;
            break;
        }
        let Some(chol) = info.cholesky() else {
            return Err(Error::Singular {
                context: "logistic information matrix".into(),
                condition: f64::INFINITY,
            });
        };
        let step = chol.solve(&score);
        iterations += 1;
        let mut t = 1.0;
        let mut candidate = &a + &step * t;
        let mut new_dev = deviance(&xt, s, &candidate);
        let mut halvings = 0;
        while !descends(new_dev, dev) && halvings < 40 {
            t *= 0.5;
            candidate = &a + &step * t;
            new_dev = deviance(&xt, s, &candidate);
            halvings += 1;
        }
        if !descends(new_dev, dev) {
            // No descent possible along the Newton direction: at numerical optimum.
            converged = score.amax() < opts.score_tol.sqrt();
            break;
        }
        a = candidate;
        if let Some(j) = (0..p).find(|&j| a[j].abs() > opts.separation_threshold) {
            return Err(Error::Separation {
                column: names[j].clone(),
                threshold: opts.separation_threshold,
            });
        }
        let rel = (dev - new_dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        trace.push(dev);
        // A stalled deviance alone is accepted only once the follow-up Newton
        // step also stalls; usually the score test fires first.
        if rel < opts.rel_deviance_tol {
            stalls += 1;
            if stalls >= 2 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            what: "principal score logistic regression".into(),
            iterations,
        });
    }
    // Polish: near the optimum a plain Newton step only shrinks the score.
    for _ in 0..3 {
        let (score, info) = score_info(&a);
        let Some(chol) = info.cholesky() else { break };
        let candidate = &a + chol.solve(&score);
        if score_info(&candidate).0.amax() >= score.amax() {
            break;
        }
        a = candidate;
    }
    // Back to the original scale.
    let mut alpha = DVector::zeros(p);
    alpha[0] = a[0];
    for j in 1..p {
        alpha[j] = a[j] / sd[j];
        alpha[0] -= a[j] * mean[j] / sd[j];
    }
    Ok((alpha, converged, iterations, trace))
}

pub fn fit_logistic(d: &Dataset) -> Result<LogisticFit> {
    fit_logistic_with(d, &LogisticOptions::default())
}

pub fn fit_logistic_with(d: &Dataset, opts: &LogisticOptions) -> Result<LogisticFit> {
    let design = score_design(d);
    let names = score_design_names(d);
    let treated: Vec<usize> = (0..d.n()).filter(|&i| d.z()[i]).collect();
    let xt = design.select_rows(treated.iter());
    let s: Vec<f64> = treated.iter().map(|&i| d.s_or_zero(i)).collect();
    let (alpha, converged, iterations, trace) = newton(&xt, &s, &names, opts)?;
    let eta: Vec<f64> = (&design * &alpha).iter().copied().collect();
    let fitted = eta.iter().map(|&e| LINK.f(e)).collect();
    Ok(LogisticFit {
        alpha: alpha.iter().copied().collect(),
        eta,
        fitted,
        converged,
        iterations,
        deviance: *trace.last().unwrap_or(&f64::NAN),
        deviance_trace: trace,
    })
}

impl LogisticFit {
    pub fn alpha_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.alpha)
    }
}

fn check_alpha(d: &Dataset, alpha: &[f64]) -> Result<()> {
    if alpha.len() != d.xs().ncols() + 1 {
        return Err(Error::Dimension(format!(
            "alpha has {} entries, expected {}",
            alpha.len(),
            d.xs().ncols() + 1
        )));
    }
    Ok(())
}

/// Linear predictor `η_i = α′X̃^S_i` for every unit.
pub fn linear_predictor(d: &Dataset, alpha: &[f64]) -> Result<Vec<f64>> {
    check_alpha(d, alpha)?;
    let x = score_design(d);
    Ok((x * DVector::from_column_slice(alpha)).iter().copied().collect())
}

/// Rows `Z_iΩ_i = z_i (s_i − f(η_i)) X̃_i`; control rows are zero.
pub fn omega(d: &Dataset, alpha: &[f64]) -> Result<DMatrix<f64>> {
    let eta = linear_predictor(d, alpha)?;
    let x = score_design(d);
    let mut out = DMatrix::zeros(d.n(), x.ncols());
    for i in 0..d.n() {
        if d.z()[i] {
            let resid = d.s_or_zero(i) - LINK.f(eta[i]);
            for j in 0..x.ncols() {
                out[(i, j)] = resid * x[(i, j)];
            }
        }
    }
    Ok(out)
}

/// `A₁₁ = −Σ z_i f′(η_i) X̃_i X̃_i′`.
pub fn bread_a11(d: &Dataset, alpha: &[f64]) -> Result<DMatrix<f64>> {
    let eta = linear_predictor(d, alpha)?;
    let x = score_design(d);
    let p = x.ncols();
    let mut a = DMatrix::zeros(p, p);
    for i in (0..d.n()).filter(|&i| d.z()[i]) {
        let w = LINK.df(eta[i]);
        for j in 0..p {
            for k in 0..p {
                a[(j, k)] -= w * x[(i, j)] * x[(i, k)];
            }
        }
    }
    Ok(a)
}

/// `B₁₁ = Σ Z_iΩ_iΩ_i′`.
pub fn meat_b11(d: &Dataset, alpha: &[f64]) -> Result<DMatrix<f64>> {
    let om = omega(d, alpha)?;
    Ok(linalg::cross_outer(&om, &om))
}

/// Area under the ROC curve: P(score⁺ > score⁻) with ties counted one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate("AUC needs both classes".into()));
    }
    // Mann-Whitney with mid-ranks.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// In-sample AUC of fitted scores on the treatment arm.
pub fn in_sample_auc(d: &Dataset, fit: &LogisticFit) -> Result<f64> {
    let (scores, labels): (Vec<f64>, Vec<bool>) = (0..d.n())
        .filter(|&i| d.z()[i])
        .map(|i| (fit.fitted[i], d.s()[i] == Some(true)))
        .unzip();
    auc(&scores, &labels)
}

/// Mean out-of-fold AUC over `k` stratified folds of the treatment arm.
pub fn cv_auc(d: &Dataset, k: usize, seed: u64) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidData("cross-validation needs at least 2 folds".into()));
    }
    let design = score_design(d);
    let names = score_design_names(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![usize::MAX; d.n()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..d.n())
            .filter(|&i| d.z()[i] && d.s()[i] == Some(class))
            .collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }
    let mut total = 0.0;
    for fold in 0..k {
        let train: Vec<usize> = (0..d.n())
            .filter(|&i| d.z()[i] && fold_of[i] != fold)
            .collect();
        let test: Vec<usize> = (0..d.n())
            .filter(|&i| d.z()[i] && fold_of[i] == fold)
            .collect();
        let xt = design.select_rows(train.iter());
        let s: Vec<f64> = train.iter().map(|&i| d.s_or_zero(i)).collect();
        if s.iter().all(|&v| v == s[0]) {
            return Err(Error::Degenerate(format!(
                "fold {fold}: training data has a single class"
            )));
        }
        let (alpha, ..) = newton(&xt, &s, &names, &LogisticOptions::default())?;
        let scores: Vec<f64> = test
            .iter()
            .map(|&i| LINK.f((design.row(i) * &alpha)[0]))
            .collect();
        let labels: Vec<bool> = test.iter().map(|&i| d.s()[i] == Some(true)).collect();
        total += auc(&scores, &labels)
            .map_err(|_| Error::Degenerate(format!("fold {fold} has a single class")))?;
    }
    Ok(total / k as f64)
}

/// Score-model diagnostics reported alongside every fit.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreDiagnostics {
    pub auc: f64,
    pub cv_auc: Option<f64>,
    /// Distinct fitted scores over all units (to 12 significant digits).
    pub distinct_scores: usize,
}

pub fn distinct_values(values: &[f64]) -> usize {
    let mut keys: Vec<String> = values.iter().map(|v| format!("{v:.11e}")).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

pub fn diagnostics(d: &Dataset, fit: &LogisticFit, cv: Option<(usize, u64)>) -> Result<ScoreDiagnostics> {
    Ok(ScoreDiagnostics {
        auc: in_sample_auc(d, fit)?,
        cv_auc: cv.map(|(k, seed)| cv_auc(d, k, seed)).transpose()?,
        distinct_scores: distinct_values(&fit.fitted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn dataset(xs: DMatrix<f64>, z: Vec<bool>, s: Vec<Option<bool>>) -> Dataset {
        let n = z.len();
        let names = (0..xs.ncols()).map(|j| format!("x{j}")).collect();
        Dataset::new(vec![0.0; n], z, s, xs, DMatrix::zeros(n, 0), names, vec![]).unwrap()
    }

    /// Treated and control halves, one latent logistic signal.
    fn random(n_arm: usize, coef: &[f64], seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = coef.len();
        let n = 2 * n_arm;
        let xs = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z: Vec<bool> = (0..n).map(|i| i < n_arm).collect();
        let s = (0..n)
            .map(|i| {
                let eta: f64 = (0..p).map(|j| coef[j] * xs[(i, j)]).sum();
                z[i].then(|| rng.random::<f64>() < LINK.f(eta))
            })
            .collect();
        dataset(xs, z, s)
    }

    #[test]
    fn link_is_guarded() {
        assert!(LINK.f(800.0) < 1.0 && LINK.f(-800.0) > 0.0);
        assert!((LINK.df(0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn two_point_intercept_only() {
        let d = dataset(
            DMatrix::zeros(3, 0),
            vec![true, true, false],
            vec![Some(true), Some(false), None],
        );
        let fit = fit_logistic(&d).unwrap();
        assert_eq!(fit.alpha.len(), 1);
        assert!(fit.alpha[0].abs() < 1e-12);
        assert!(fit.fitted.iter().all(|&p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn intercept_only_mle_is_logit_of_mean() {
        let s = [true, true, true, false, true, false, false, true];
        let mut z = vec![true; s.len()];
        z.extend([false; 4]);
        let mut sv: Vec<Option<bool>> = s.iter().map(|&v| Some(v)).collect();
        sv.extend([None; 4]);
        let d = dataset(DMatrix::zeros(12, 0), z, sv);
        let fit = fit_logistic(&d).unwrap();
        let mean: f64 = 5.0 / 8.0;
        assert!((fit.alpha[0] - (mean / (1.0 - mean)).ln()).abs() < 1e-10);
        // Imputed regressor: controls get the treated-arm mean of S.
        let r = crate::data::build_imputed_regressor(&d, &fit.fitted).unwrap();
        for i in 8..12 {
            assert!((r.r[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn no_signal_gives_flat_slopes() {
        let d = random(20_000, &[0.0, 0.0], 1);
        let fit = fit_logistic(&d).unwrap();
        assert!(fit.alpha[1].abs() < 0.05 && fit.alpha[2].abs() < 0.05);
        let sbar = (0..d.n()).filter(|&i| d.z()[i]).map(|i| d.s_or_zero(i)).sum::<f64>()
            / d.n_treated() as f64;
        assert!((fit.alpha[0] - (sbar / (1.0 - sbar)).ln()).abs() < 0.05);
    }

    #[test]
    fn score_vanishes_at_mle_and_on_controls() {
        let d = random(300, &[0.8, -0.5], 2);
        let fit = fit_logistic(&d).unwrap();
        let om = omega(&d, &fit.alpha).unwrap();
        for j in 0..om.ncols() {
            assert!(om.column(j).sum().abs() < 1e-8);
        }
        for i in (0..d.n()).filter(|&i| !d.z()[i]) {
            assert!(om.row(i).iter().all(|&v| v == 0.0));
        }
        assert!(fit.converged);
        assert!(fit.fitted.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn omega_single_unit_by_hand() {
        // f(η)=0.25 ⇔ η = ln(1/3); X̃=(1,2); choose α=(ln(1/3), 0).
        let d = dataset(
            DMatrix::from_row_slice(3, 1, &[2.0, 0.0, 5.0]),
            vec![true, true, false],
            vec![Some(true), Some(false), None],
        );
        let om = omega(&d, &[(1.0f64 / 3.0).ln(), 0.0]).unwrap();
        assert!((om[(0, 0)] - 0.75).abs() < 1e-12);
        assert!((om[(0, 1)] - 1.5).abs() < 1e-12);
        assert!(omega(&d, &[0.0]).is_err());
    }

    #[test]
    fn a11_intercept_only_by_hand() {
        let d = dataset(
            DMatrix::zeros(6, 0),
            vec![true, true, true, true, false, false],
            vec![Some(true), Some(false), Some(true), Some(false), None, None],
        );
        let a = bread_a11(&d, &[0.0]).unwrap();
        assert!((a[(0, 0)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn b11_is_sum_of_score_outer_products() {
        let d = dataset(
            DMatrix::zeros(3, 0),
            vec![true, true, false],
            vec![Some(true), Some(false), None],
        );
        // (1 − 0.5)² + (0 − 0.5)²
        let b = meat_b11(&d, &[0.0]).unwrap();
        assert!((b[(0, 0)] - 0.5).abs() < 1e-15);
        let zero = DMatrix::<f64>::zeros(4, 2);
        assert_eq!(linalg::cross_outer(&zero, &zero), DMatrix::zeros(2, 2));
    }

    #[test]
    fn a11_matches_finite_differences() {
        let d = random(60, &[0.7, -0.4, 0.2], 3);
        let alpha = [0.1, 0.3, -0.2, 0.5];
        let a = bread_a11(&d, &alpha).unwrap();
        let eps = 1e-6;
        for k in 0..alpha.len() {
            let mut up = alpha;
            let mut dn = alpha;
            up[k] += eps;
            dn[k] -= eps;
            let su = omega(&d, &up).unwrap().row_sum();
            let sd = omega(&d, &dn).unwrap().row_sum();
            for j in 0..alpha.len() {
                let fd = (su[j] - sd[j]) / (2.0 * eps);
                assert!((fd - a[(j, k)]).abs() < 1e-6, "{j},{k}: {fd} vs {}", a[(j, k)]);
            }
        }
    }

    #[test]
    fn deviance_trace_non_increasing() {
        let d = random(200, &[1.5, -1.0], 4);
        let fit = fit_logistic(&d).unwrap();
        for w in fit.deviance_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn separation_is_reported() {
        let n = 40;
        let xs = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let z: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let s = (0..n).map(|i| z[i].then_some(i >= 20)).collect();
        let d = dataset(xs, z, s);
        assert!(matches!(fit_logistic(&d), Err(Error::Separation { .. })));
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let d = random(50, &[0.5, 0.5], 5);
        let xs = d.xs().clone();
        let dup = DMatrix::from_fn(d.n(), 3, |i, j| if j < 2 { xs[(i, j)] } else { 2.0 * xs[(i, 0)] - xs[(i, 1)] });
        let d2 = d
            .with_covariates(dup, vec!["a".into(), "b".into(), "c".into()], DMatrix::zeros(d.n(), 0), vec![])
            .unwrap();
        match fit_logistic(&d2) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["c"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 5], &[true, false, true, false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.4, 0.6], &[true, false, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.6, 0.9, 0.4], &[true, false, true]).unwrap(), 0.0);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn cv_auc_is_seeded_and_plausible() {
        let d = random(400, &[1.0, -1.0], 6);
        let a = cv_auc(&d, 10, 7).unwrap();
        let b = cv_auc(&d, 10, 7).unwrap();
        assert_eq!(a, b);
        let fit = fit_logistic(&d).unwrap();
        let ins = in_sample_auc(&d, &fit).unwrap();
        assert!(a > 0.6 && a <= ins + 0.02, "{a} vs {ins}");
    }

    #[test]
    fn distinct_counts() {
        assert_eq!(distinct_values(&[0.5, 0.5, 0.25]), 2);
        let d = random(30, &[0.5], 8);
        let fit = fit_logistic(&d).unwrap();
        let diag = diagnostics(&d, &fit, None).unwrap();
        assert!(diag.distinct_scores > 3);
        assert!((0.0..=1.0).contains(&diag.auc));
    }

    /// Brute-force AUC over all positive/negative pairs.
    fn auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn auc_matches_pair_enumeration(
            v in prop::collection::vec((0u8..6, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = v.iter().map(|x| x.0 as f64).collect();
            let labels: Vec<bool> = v.iter().map(|x| x.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let a = auc(&scores, &labels).unwrap();
            prop_assert!((a - auc_pairs(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn fitted_scores_affine_invariant(seed in 0u64..1000, a in -3.0f64..3.0, b in 0.2f64..4.0, c in -2.0f64..2.0) {
            let d = random(120, &[0.6, -0.6], seed);
            let fit = fit_logistic(&d).unwrap();
            let xs = d.xs();
            // Invertible affine map of the two columns.
            let t = DMatrix::from_fn(d.n(), 2, |i, j| {
                if j == 0 { b * xs[(i, 0)] + c * xs[(i, 1)] + a } else { xs[(i, 1)] - 5.0 }
            });
            let d2 = d.with_covariates(t, vec!["u".into(), "v".into()], DMatrix::zeros(d.n(), 0), vec![]).unwrap();
            let fit2 = fit_logistic(&d2).unwrap();
            for (p, q) in fit.fitted.iter().zip(&fit2.fitted) {
                prop_assert!((p - q).abs() < 1e-8);
            }
        }
    }
}
