//! Outcome stage: OLS of `Y` on `[1, R, Z, Z·R, X^Y]`, optionally with the
//! covariate interactions `[X^Y·R, X^Y·Z, X^Y·Z·R]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImputedRegressor};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Plain,
    Interactions,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "plain" => Ok(Mode::Plain),
            "interactions" => Ok(Mode::Interactions),
            other => Err(Error::InvalidData(format!("unknown mode `{other}`"))),
        }
    }
}

/// Column layout of the outcome design for a given mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub mode: Mode,
    pub p_y: usize,
}

impl Layout {
    pub fn new(mode: Mode, p_y: usize) -> Self {
        Layout { mode, p_y }
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            Mode::Plain => 4 + self.p_y,
            Mode::Interactions => 4 + 4 * self.p_y,
        }
    }

    /// Offset of γ₁ (main covariate effects).
    pub fn gamma1(&self) -> usize {
        4
    }

    /// Offset of γ₂ (covariate × R).
    pub fn gamma2(&self) -> usize {
        4 + self.p_y
    }

    /// Offset of γ₃ (covariate × Z).
    pub fn gamma3(&self) -> usize {
        4 + 2 * self.p_y
    }

    /// Offset of γ₄ (covariate × Z × R).
    pub fn gamma4(&self) -> usize {
        4 + 3 * self.p_y
    }

    pub fn names(&self, xy_names: &[String]) -> Vec<String> {
        let mut names: Vec<String> = ["(Intercept)", "R", "Z", "Z:R"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(xy_names.iter().cloned());
        if self.mode == Mode::Interactions {
            names.extend(xy_names.iter().map(|x| format!("{x}:R")));
            names.extend(xy_names.iter().map(|x| format!("{x}:Z")));
            names.extend(xy_names.iter().map(|x| format!("{x}:Z:R")));
        }
        names
    }

    /// Fills `row` with the design row for (r, z, x).
    pub fn fill_row(&self, r: f64, z: f64, x: impl Iterator<Item = f64> + Clone, row: &mut [f64]) {
        row[0] = 1.0;
        row[1] = r;
        row[2] = z;
        row[3] = z * r;
        for (k, v) in x.enumerate() {
            row[4 + k] = v;
            if self.mode == Mode::Interactions {
                row[self.gamma2() + k] = v * r;
                row[self.gamma3() + k] = v * z;
                row[self.gamma4() + k] = v * z * r;
            }
        }
    }

    /// Fills `row` with `∂X_i/∂r_i`.
    pub fn fill_row_dr(&self, z: f64, x: impl Iterator<Item = f64> + Clone, row: &mut [f64]) {
        row.iter_mut().for_each(|v| *v = 0.0);
        row[1] = 1.0;
        row[3] = z;
        if self.mode == Mode::Interactions {
            for (k, v) in x.enumerate() {
                row[self.gamma2() + k] = v;
                row[self.gamma4() + k] = v * z;
            }
        }
    }
}

/// Full outcome design matrix and column names.
pub fn design(d: &Dataset, r: &ImputedRegressor, mode: Mode) -> Result<(DMatrix<f64>, Vec<String>)> {
    if r.r.len() != d.n() {
        return Err(Error::Dimension(format!(
            "regressor has {} entries for {} units",
            r.r.len(),
            d.n()
        )));
    }
    let layout = Layout::new(mode, d.xy().ncols());
    let p = layout.dim();
    let mut x = DMatrix::zeros(d.n(), p);
    let mut row = vec![0.0; p];
    for i in 0..d.n() {
        let z = if d.z()[i] { 1.0 } else { 0.0 };
        layout.fill_row(r.r[i], z, d.xy().row(i).iter().copied(), &mut row);
        for j in 0..p {
            x[(i, j)] = row[j];
        }
    }
    Ok((x, layout.names(d.xy_names())))
}

#[derive(Debug, Clone, Serialize)]
pub struct OlsFit {
    pub mode: Mode,
    pub beta: Vec<f64>,
    pub names: Vec<String>,
    pub residuals: Vec<f64>,
    /// Residual variance; diagnostic only, inference uses the sandwich.
    pub sigma2: f64,
}

impl OlsFit {
    pub fn layout(&self, p_y: usize) -> Layout {
        Layout::new(self.mode, p_y)
    }
}

pub fn fit_ols(d: &Dataset, r: &ImputedRegressor, mode: Mode) -> Result<OlsFit> {
    let (x, names) = design(d, r, mode)?;
    let y = DVector::from_column_slice(d.y());
    let beta = linalg::least_squares(&x, &y, &names)?;
    let resid = &y - &x * &beta;
    let df = (d.n() as f64 - x.ncols() as f64).max(1.0);
    Ok(OlsFit {
        mode,
        beta: beta.iter().copied().collect(),
        names,
        sigma2: resid.norm_squared() / df,
        residuals: resid.iter().copied().collect(),
    })
}

fn check_beta(d: &Dataset, beta: &[f64], mode: Mode) -> Result<()> {
    let dim = Layout::new(mode, d.xy().ncols()).dim();
    if beta.len() != dim {
        return Err(Error::Dimension(format!(
            "beta has {} entries, {mode:?} design has {dim} columns",
            beta.len()
        )));
    }
    Ok(())
}

/// Rows `Ψ_i = X_i (y_i − X_i′β)`.
pub fn psi(d: &Dataset, r: &ImputedRegressor, beta: &[f64], mode: Mode) -> Result<DMatrix<f64>> {
    check_beta(d, beta, mode)?;
    let (x, _) = design(d, r, mode)?;
    let resid = DVector::from_column_slice(d.y()) - &x * DVector::from_column_slice(beta);
    let mut out = x;
    for i in 0..d.n() {
        out.row_mut(i).scale_mut(resid[i]);
    }
    Ok(out)
}

/// `A₂₂ = −Σ X_iX_i′`.
pub fn bread_a22(d: &Dataset, r: &ImputedRegressor, mode: Mode) -> Result<DMatrix<f64>> {
    let (x, _) = design(d, r, mode)?;
    Ok(-(x.transpose() * x))
}

/// `B₂₂ = Σ Ψ_iΨ_i′`.
pub fn meat_b22(d: &Dataset, r: &ImputedRegressor, beta: &[f64], mode: Mode) -> Result<DMatrix<f64>> {
    let ps = psi(d, r, beta, mode)?;
    Ok(linalg::cross_outer(&ps, &ps))
}

/// Conditional means `(μ_C⁰, μ_C¹, μ_T⁰, μ_T¹)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StratumMeans {
    pub mu_c0: f64,
    pub mu_c1: f64,
    pub mu_t0: f64,
    pub mu_t1: f64,
}

/// Sample mean and Monte-Carlo standard error of each moment component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    pub mean: [f64; 4],
    pub se: [f64; 4],
}

/// Evaluates the four-component moment vector of the score-mixture
/// representation at the given means, using latent strata `s_t` and (true)
/// scores `e`. Simulation-only: the latent strata are never observed in practice.
pub fn moment_conditions(
    d: &Dataset,
    s_t: &[bool],
    scores: &[f64],
    mu: StratumMeans,
) -> Result<MomentCheck> {
    let n = d.n();
    if s_t.len() != n {
        return Err(Error::InvalidData(format!(
            "latent strata required for every unit ({} given, {n} units)",
            s_t.len()
        )));
    }
    if scores.len() != n {
        return Err(Error::Dimension(format!("{} scores for {n} units", scores.len())));
    }
    let mut sum = [0.0; 4];
    let mut sum_sq = [0.0; 4];
    for i in 0..n {
        let y = d.y()[i];
        let z = if d.z()[i] { 1.0 } else { 0.0 };
        let e = scores[i];
        let st = if s_t[i] { 1.0 } else { 0.0 };
        let c = [
            (1.0 - z) * (y - mu.mu_c0 - e * (mu.mu_c1 - mu.mu_c0)),
            (1.0 - z) * (e * y - e * mu.mu_c0 - e * e * (mu.mu_c1 - mu.mu_c0)),
            z * (y - mu.mu_t0 - st * (mu.mu_t1 - mu.mu_t0)),
            z * (st * y - st * mu.mu_t0 - st * st * (mu.mu_t1 - mu.mu_t0)),
        ];
        for k in 0..4 {
            sum[k] += c[k];
            sum_sq[k] += c[k] * c[k];
        }
    }
    let nf = n as f64;
    let mut mean = [0.0; 4];
    let mut se = [0.0; 4];
    for k in 0..4 {
        mean[k] = sum[k] / nf;
        let var = (sum_sq[k] / nf - mean[k] * mean[k]).max(0.0) * nf / (nf - 1.0);
        se[k] = (var / nf).sqrt();
    }
    Ok(MomentCheck { mean, se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RegressorSource;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    /// Dataset with arbitrary r, no validation of how r was produced.
    fn data_with_r(
        y: Vec<f64>,
        z: Vec<bool>,
        r: Vec<f64>,
        xy: DMatrix<f64>,
    ) -> (Dataset, ImputedRegressor) {
        let n = y.len();
        let s: Vec<Option<bool>> = (0..n).map(|i| z[i].then_some(r[i] > 0.5)).collect();
        let p = xy.ncols();
        let d = Dataset::new(y, z.clone(), s, DMatrix::zeros(n, 0), xy, vec![], names(p)).unwrap();
        let source = z
            .iter()
            .map(|&t| if t { RegressorSource::Observed } else { RegressorSource::Imputed })
            .collect();
        (d, ImputedRegressor { r, source })
    }

    fn random(n: usize, p: usize, seed: u64) -> (Dataset, ImputedRegressor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let r: Vec<f64> = z
            .iter()
            .map(|&t| {
                let u: f64 = rng.random();
                if t { (u < 0.4) as u8 as f64 } else { u }
            })
            .collect();
        let xy = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (mut d, mut rr) = data_with_r(y, z, r, xy);
        // Guarantee both S classes.
        if d.n_treated() > 0 {
            rr.r[0] = 1.0;
            rr.r[2] = 0.0;
            let s: Vec<Option<bool>> = (0..n).map(|i| d.z()[i].then_some(rr.r[i] > 0.5)).collect();
            d = Dataset::new(d.y().to_vec(), d.z().to_vec(), s, d.xs().clone(), d.xy().clone(), vec![], names(p)).unwrap();
        }
        (d, rr)
    }

    #[test]
    fn noiseless_interpolation() {
        let (d0, r) = random(20, 0, 1);
        let y: Vec<f64> = (0..d0.n())
            .map(|i| {
                let z = d0.z()[i] as u8 as f64;
                1.0 + 2.0 * r.r[i] + 3.0 * z + 4.0 * z * r.r[i]
            })
            .collect();
        let (d, r) = data_with_r(y, d0.z().to_vec(), r.r.clone(), DMatrix::zeros(20, 0));
        let fit = fit_ols(&d, &r, Mode::Plain).unwrap();
        for (b, t) in fit.beta.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((b - t).abs() < 1e-10);
        }
    }

    #[test]
    fn normal_equations_hold() {
        for mode in [Mode::Plain, Mode::Interactions] {
            let (d, r) = random(80, 2, 2);
            let fit = fit_ols(&d, &r, mode).unwrap();
            let ps = psi(&d, &r, &fit.beta, mode).unwrap();
            assert!(ps.row_sum().amax() < 1e-8);
            assert_eq!(fit.beta.len(), Layout::new(mode, 2).dim());
        }
    }

    #[test]
    fn psi_single_unit_by_hand() {
        // X=(1,0.5,0,0), y=2, β=(1,2,0,0) ⇒ residual 0.
        let (d, r) = data_with_r(
            vec![2.0, 0.0, 0.0, 0.0],
            vec![false, true, true, false],
            vec![0.5, 1.0, 0.0, 0.3],
            DMatrix::zeros(4, 0),
        );
        let ps = psi(&d, &r, &[1.0, 2.0, 0.0, 0.0], Mode::Plain).unwrap();
        assert!(ps.row(0).iter().all(|&v| v == 0.0));
        assert!(psi(&d, &r, &[1.0], Mode::Plain).is_err());
    }

    #[test]
    fn a22_two_rows_by_hand() {
        // Restrict to the (1, R) columns: rows (1,0),(1,1) ⇒ −[[2,1],[1,1]].
        let (d, r) = data_with_r(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![true, false, true, false],
            vec![0.0, 1.0, 1.0, 0.5],
            DMatrix::zeros(4, 0),
        );
        let a = bread_a22(&d, &r, Mode::Plain).unwrap();
        let (x, _) = design(&d, &r, Mode::Plain).unwrap();
        let sub = x.rows(0, 2).columns(0, 2).into_owned();
        let a_sub = -(sub.transpose() * &sub);
        assert_eq!(a_sub, DMatrix::from_row_slice(2, 2, &[-2.0, -1.0, -1.0, -1.0]));
        assert_eq!(a, -(x.transpose() * x));
    }

    #[test]
    fn b22_zero_with_zero_residuals() {
        let (d0, r) = random(12, 0, 3);
        let beta = [0.5, -1.0, 2.0, 0.25];
        let y: Vec<f64> = (0..d0.n())
            .map(|i| {
                let z = d0.z()[i] as u8 as f64;
                beta[0] + beta[1] * r.r[i] + beta[2] * z + beta[3] * z * r.r[i]
            })
            .collect();
        let (d, r) = data_with_r(y, d0.z().to_vec(), r.r.clone(), DMatrix::zeros(12, 0));
        let b = meat_b22(&d, &r, &beta, Mode::Plain).unwrap();
        assert!(linalg::max_abs(&b) < 1e-24);
    }

    #[test]
    fn a22_matches_finite_differences() {
        for mode in [Mode::Plain, Mode::Interactions] {
            let (d, r) = random(30, 2, 4);
            let p = Layout::new(mode, 2).dim();
            let beta: Vec<f64> = (0..p).map(|j| 0.1 * j as f64 - 0.3).collect();
            let a = bread_a22(&d, &r, mode).unwrap();
            let eps = 1e-6;
            for k in 0..p {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[k] += eps;
                dn[k] -= eps;
                let su = psi(&d, &r, &up, mode).unwrap().row_sum();
                let sd = psi(&d, &r, &dn, mode).unwrap().row_sum();
                for j in 0..p {
                    let fd = (su[j] - sd[j]) / (2.0 * eps);
                    assert!((fd - a[(j, k)]).abs() < 1e-7 * (1.0 + a[(j, k)].abs()));
                }
            }
        }
    }

    #[test]
    fn newton_on_estimating_equations_equals_qr() {
        let (d, r) = random(60, 2, 5);
        let fit = fit_ols(&d, &r, Mode::Plain).unwrap();
        let p = fit.beta.len();
        let mut beta = DVector::zeros(p);
        let a = bread_a22(&d, &r, Mode::Plain).unwrap();
        let a_inv = a.try_inverse().unwrap();
        for _ in 0..3 {
            let g = psi(&d, &r, beta.as_slice(), Mode::Plain).unwrap().row_sum().transpose();
            beta -= &a_inv * g;
        }
        for j in 0..p {
            assert!((beta[j] - fit.beta[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn saturated_fit_recovers_subgroup_means() {
        // With R = S_T known in both arms, the coefficients map onto the four means.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 400;
        let z: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let st: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() < 0.4) as u8 as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| st[i] + 0.5 * z[i] as u8 as f64 + rng.random::<f64>()).collect();
        let (d, r) = data_with_r(y.clone(), z.clone(), st.clone(), DMatrix::zeros(n, 0));
        let fit = fit_ols(&d, &r, Mode::Plain).unwrap();
        let mean = |zz: bool, s: f64| {
            let v: Vec<f64> = (0..n).filter(|&i| z[i] == zz && st[i] == s).map(|i| y[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (c0, c1, t0, t1) = (mean(false, 0.0), mean(false, 1.0), mean(true, 0.0), mean(true, 1.0));
        let b = &fit.beta;
        assert!((b[0] - c0).abs() < 1e-10);
        assert!((b[1] - (c1 - c0)).abs() < 1e-10);
        assert!((b[2] - (t0 - c0)).abs() < 1e-10);
        assert!((b[3] - (t1 - t0 - c1 + c0)).abs() < 1e-10);
    }

    #[test]
    fn collinear_r_and_covariate_is_rejected() {
        let (d, mut r) = random(40, 1, 7);
        // Make R an affine function of the covariate in both arms.
        let x0: Vec<f64> = d.xy().column(0).iter().copied().collect();
        for i in 0..d.n() {
            r.r[i] = 0.5 + 0.1 * x0[i];
        }
        match fit_ols(&d, &r, Mode::Plain) {
            Err(Error::RankDeficient { columns }) => assert!(columns.contains(&"x0".to_string()), "{columns:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn moments_linear_in_mu_c0() {
        let (d, r) = random(200, 0, 8);
        let st: Vec<bool> = r.r.iter().map(|&v| v > 0.5).collect();
        let e: Vec<f64> = r.r.iter().map(|&v| v.clamp(0.05, 0.95)).collect();
        let mu = StratumMeans { mu_c0: 0.1, mu_c1: 0.4, mu_t0: -0.2, mu_t1: 0.3 };
        let base = moment_conditions(&d, &st, &e, mu).unwrap();
        let bumped = moment_conditions(&d, &st, &e, StratumMeans { mu_c0: 1.1, ..mu }).unwrap();
        let expected: f64 = (0..d.n()).filter(|&i| !d.z()[i]).map(|i| -(1.0 - e[i])).sum::<f64>() / d.n() as f64;
        assert!((bumped.mean[0] - base.mean[0] - expected).abs() < 1e-12);
        assert!(moment_conditions(&d, &st[..10], &e, mu).is_err());
    }

    #[test]
    fn moments_collapse_with_null_scores() {
        let (d, _) = random(50, 0, 9);
        let st = vec![false; d.n()];
        let e = vec![0.0; d.n()];
        let mu = StratumMeans { mu_c0: 0.3, mu_c1: 9.0, mu_t0: -0.1, mu_t1: 5.0 };
        let m = moment_conditions(&d, &st, &e, mu).unwrap();
        let nf = d.n() as f64;
        let c: f64 = (0..d.n()).filter(|&i| !d.z()[i]).map(|i| d.y()[i] - 0.3).sum::<f64>() / nf;
        let t: f64 = (0..d.n()).filter(|&i| d.z()[i]).map(|i| d.y()[i] + 0.1).sum::<f64>() / nf;
        assert!((m.mean[0] - c).abs() < 1e-12 && (m.mean[2] - t).abs() < 1e-12);
        assert_eq!((m.mean[1], m.mean[3]), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn psi_sum_is_design_times_residual(seed in 0u64..500, b in prop::collection::vec(-2.0f64..2.0, 6)) {
            let (d, r) = random(25, 2, seed);
            let (x, _) = design(&d, &r, Mode::Plain).unwrap();
            let beta = DVector::from_vec(b.clone());
            let resid = DVector::from_column_slice(d.y()) - &x * &beta;
            let lhs = psi(&d, &r, &b, Mode::Plain).unwrap().row_sum().transpose();
            let rhs = x.transpose() * resid;
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }

        #[test]
        fn beta_is_permutation_invariant(seed in 0u64..500) {
            use rand::seq::SliceRandom;
            let (d, r) = random(30, 1, seed);
            let mut perm: Vec<usize> = (0..d.n()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
            let dp = d.select_rows(&perm).unwrap();
            let rp = ImputedRegressor {
                r: perm.iter().map(|&i| r.r[i]).collect(),
                source: perm.iter().map(|&i| r.source[i]).collect(),
            };
            let a = fit_ols(&d, &r, Mode::Plain).unwrap();
            let b = fit_ols(&dp, &rp, Mode::Plain).unwrap();
            for (u, v) in a.beta.iter().zip(&b.beta) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
