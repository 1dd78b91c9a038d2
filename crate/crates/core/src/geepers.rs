//! Two-step principal-effect estimator with the stacked sandwich covariance.
//!
//! Parameters are stacked as `θ = (α, β)`: the score model first, then the
//! outcome regression. Estimating rows are `Λ_i = (Z_iΩ_i; Ψ_i)`, and control
//! units carry the dependence of `Ψ_i` on `α` through `R_i = f(η_i)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{build_imputed_regressor, Dataset, ImputedRegressor};
use crate::error::{Error, Result};
use crate::linalg;
use crate::logistic::{self, InverseLink, LogisticFit, ScoreDiagnostics, LINK};
use crate::ols::{self, Layout, Mode, OlsFit, StratumMeans};

/// Step used by the finite-difference form of `A₂₁`.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum A21Method {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Effects {
    pub tau0: f64,
    pub tau1: f64,
    pub se0: f64,
    pub se1: f64,
    pub cov01: f64,
}

#[derive(Debug, Clone)]
pub struct GeepersFit {
    pub mode: Mode,
    pub logistic: LogisticFit,
    pub ols: OlsFit,
    /// Joint covariance of `(α̂, β̂)`.
    pub vcov: DMatrix<f64>,
    pub effects: Effects,
    /// Treated-arm covariate means for `S = 0` and `S = 1` (interaction mode only).
    pub xbar_s0: Option<Vec<f64>>,
    pub xbar_s1: Option<Vec<f64>>,
    pub diagnostics: ScoreDiagnostics,
}

impl GeepersFit {
    pub fn tau0(&self) -> f64 {
        self.effects.tau0
    }

    pub fn tau1(&self) -> f64 {
        self.effects.tau1
    }

    pub fn n_alpha(&self) -> usize {
        self.logistic.alpha.len()
    }

    /// Stratum means implied by the outcome coefficients at `X^Y = 0`.
    pub fn stratum_means(&self) -> StratumMeans {
        let b = &self.ols.beta;
        StratumMeans {
            mu_c0: b[0],
            mu_c1: b[0] + b[1],
            mu_t0: b[0] + b[2],
            mu_t1: b[0] + b[1] + b[2] + b[3],
        }
    }
}

/// Regressor implied by `α`: observed S for treated units, `f(η_i)` otherwise.
pub fn regressor_at(d: &Dataset, alpha: &[f64]) -> Result<ImputedRegressor> {
    let eta = logistic::linear_predictor(d, alpha)?;
    let scores: Vec<f64> = eta.iter().map(|&e| LINK.f(e)).collect();
    build_imputed_regressor(d, &scores)
}

/// Stacked estimating rows `Λ_i(α, β)`, one per unit.
pub fn stacked_rows(d: &Dataset, alpha: &[f64], beta: &[f64], mode: Mode) -> Result<DMatrix<f64>> {
    let om = logistic::omega(d, alpha)?;
    let r = regressor_at(d, alpha)?;
    let ps = ols::psi(d, &r, beta, mode)?;
    let (q, p) = (om.ncols(), ps.ncols());
    let mut out = DMatrix::zeros(d.n(), q + p);
    out.columns_mut(0, q).copy_from(&om);
    out.columns_mut(q, p).copy_from(&ps);
    Ok(out)
}

/// `A₂₁ = Σ ∂Ψ_i/∂α′`, from the chain rule through `R_i = f(η_i)` on control units.
pub fn a21_block(d: &Dataset, alpha: &[f64], beta: &[f64], mode: Mode) -> Result<DMatrix<f64>> {
    let eta = logistic::linear_predictor(d, alpha)?;
    let layout = Layout::new(mode, d.xy().ncols());
    let p = layout.dim();
    if beta.len() != p {
        return Err(Error::Dimension(format!("beta has {} entries, design has {p}", beta.len())));
    }
    let xs = logistic::score_design(d);
    let q = xs.ncols();
    let mut a21 = DMatrix::zeros(p, q);
    let mut row = vec![0.0; p];
    let mut dr = vec![0.0; p];
    let mut grad = vec![0.0; p];
    for i in (0..d.n()).filter(|&i| !d.z()[i]) {
        let r = LINK.f(eta[i]);
        let slope = LINK.df(eta[i]);
        let x = d.xy().row(i);
        layout.fill_row(r, 0.0, x.iter().copied(), &mut row);
        layout.fill_row_dr(0.0, x.iter().copied(), &mut dr);
        let fitted: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let resid = d.y()[i] - fitted;
        let dfit: f64 = dr.iter().zip(beta).map(|(a, b)| a * b).sum();
        for j in 0..p {
            grad[j] = slope * (dr[j] * resid - row[j] * dfit);
        }
        for j in 0..p {
            if grad[j] == 0.0 {
                continue;
            }
            for k in 0..q {
                a21[(j, k)] += grad[j] * xs[(i, k)];
            }
        }
    }
    Ok(a21)
}

/// Central-difference `A₂₁`; the reference for [`a21_block`].
pub fn a21_fd(d: &Dataset, alpha: &[f64], beta: &[f64], mode: Mode, step: f64) -> Result<DMatrix<f64>> {
    let q = alpha.len();
    let mut out = DMatrix::zeros(beta.len(), q);
    for k in 0..q {
        let mut up = alpha.to_vec();
        let mut dn = alpha.to_vec();
        up[k] += step;
        dn[k] -= step;
        let su = ols::psi(d, &regressor_at(d, &up)?, beta, mode)?.row_sum();
        let sd = ols::psi(d, &regressor_at(d, &dn)?, beta, mode)?.row_sum();
        for j in 0..beta.len() {
            out[(j, k)] = (su[j] - sd[j]) / (2.0 * step);
        }
    }
    Ok(out)
}

/// Bread and meat blocks of the stacked system at `(α, β)`.
#[derive(Debug, Clone)]
pub struct Blocks {
    pub a11: DMatrix<f64>,
    pub a21: DMatrix<f64>,
    pub a22: DMatrix<f64>,
    pub b11: DMatrix<f64>,
    pub b12: DMatrix<f64>,
    pub b22: DMatrix<f64>,
}

pub fn blocks(d: &Dataset, alpha: &[f64], beta: &[f64], mode: Mode, a21: A21Method) -> Result<Blocks> {
    let r = regressor_at(d, alpha)?;
    let om = logistic::omega(d, alpha)?;
    let ps = ols::psi(d, &r, beta, mode)?;
    let a21 = match a21 {
        A21Method::Analytic => a21_block(d, alpha, beta, mode)?,
        A21Method::FiniteDifference => a21_fd(d, alpha, beta, mode, FD_STEP)?,
    };
    Ok(Blocks {
        a11: logistic::bread_a11(d, alpha)?,
        a21,
        a22: ols::bread_a22(d, &r, mode)?,
        b11: linalg::cross_outer(&om, &om),
        b12: linalg::cross_outer(&om, &ps),
        b22: linalg::cross_outer(&ps, &ps),
    })
}

impl Blocks {
    pub fn bread(&self) -> DMatrix<f64> {
        let (q, p) = (self.a11.nrows(), self.a22.nrows());
        let mut a = DMatrix::zeros(q + p, q + p);
        a.view_mut((0, 0), (q, q)).copy_from(&self.a11);
        a.view_mut((q, 0), (p, q)).copy_from(&self.a21);
        a.view_mut((q, q), (p, p)).copy_from(&self.a22);
        a
    }

    pub fn meat(&self) -> DMatrix<f64> {
        let (q, p) = (self.b11.nrows(), self.b22.nrows());
        let mut b = DMatrix::zeros(q + p, q + p);
        b.view_mut((0, 0), (q, q)).copy_from(&self.b11);
        b.view_mut((0, q), (q, p)).copy_from(&self.b12);
        b.view_mut((q, 0), (p, q)).copy_from(&self.b12.transpose());
        b.view_mut((q, q), (p, p)).copy_from(&self.b22);
        b
    }
}

/// `V = A⁻¹ B A⁻ᵀ` for `A = [[A₁₁, 0], [A₂₁, A₂₂]]` and `B = [[B₁₁, B₁₂], [B₁₂′, B₂₂]]`.
pub fn sandwich_vcov(
    a11: &DMatrix<f64>,
    a22: &DMatrix<f64>,
    a21: &DMatrix<f64>,
    b11: &DMatrix<f64>,
    b22: &DMatrix<f64>,
    b12: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (q, p) = (a11.nrows(), a22.nrows());
    let consistent = a11.is_square()
        && a22.is_square()
        && a21.shape() == (p, q)
        && b11.shape() == (q, q)
        && b22.shape() == (p, p)
        && b12.shape() == (q, p);
    if !consistent {
        return Err(Error::Dimension("sandwich blocks have inconsistent shapes".into()));
    }
    let blocks = Blocks {
        a11: a11.clone(),
        a21: a21.clone(),
        a22: a22.clone(),
        b11: b11.clone(),
        b12: b12.clone(),
        b22: b22.clone(),
    };
    let a_inv = linalg::checked_inverse(&blocks.bread(), "stacked bread matrix A")?;
    let v = &a_inv * blocks.meat() * a_inv.transpose();
    Ok(linalg::symmetrize(&v))
}

/// Selection vectors over `θ = (α, β)` for `τ⁰` and `τ¹`.
///
/// In interaction mode the treated-arm covariate means are fixed constants.
pub fn effect_contrasts(
    layout: Layout,
    n_alpha: usize,
    xbar_s0: Option<&[f64]>,
    xbar_s1: Option<&[f64]>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let dim = n_alpha + layout.dim();
    let mut c0 = DVector::zeros(dim);
    let mut c1 = DVector::zeros(dim);
    c0[n_alpha + 2] = 1.0;
    c1[n_alpha + 2] = 1.0;
    c1[n_alpha + 3] = 1.0;
    if layout.mode == Mode::Interactions {
        let (Some(x0), Some(x1)) = (xbar_s0, xbar_s1) else {
            return Err(Error::Dimension("interaction mode needs both covariate mean vectors".into()));
        };
        if x0.len() != layout.p_y || x1.len() != layout.p_y {
            return Err(Error::Dimension("covariate mean vectors do not match X^Y".into()));
        }
        for k in 0..layout.p_y {
            c0[n_alpha + layout.gamma3() + k] = x0[k];
            c1[n_alpha + layout.gamma3() + k] = x1[k];
            c1[n_alpha + layout.gamma4() + k] = x1[k];
        }
    }
    Ok((c0, c1))
}

/// Point estimates `c′θ` and delta-method covariance `c′Vc`.
pub fn extract_effects(theta: &DVector<f64>, vcov: &DMatrix<f64>, c0: &DVector<f64>, c1: &DVector<f64>) -> Effects {
    let v0 = (c0.transpose() * vcov * c0)[0];
    let v1 = (c1.transpose() * vcov * c1)[0];
    Effects {
        tau0: c0.dot(theta),
        tau1: c1.dot(theta),
        se0: v0.max(0.0).sqrt(),
        se1: v1.max(0.0).sqrt(),
        cov01: (c0.transpose() * vcov * c1)[0],
    }
}

/// Covariate means over treated units with the given S.
pub fn treated_covariate_means(d: &Dataset, s: bool) -> Vec<f64> {
    let rows: Vec<usize> = (0..d.n()).filter(|&i| d.s()[i] == Some(s)).collect();
    (0..d.xy().ncols())
        .map(|j| rows.iter().map(|&i| d.xy()[(i, j)]).sum::<f64>() / rows.len() as f64)
        .collect()
}

pub fn fit_geepers(d: &Dataset, mode: Mode) -> Result<GeepersFit> {
    let score = logistic::fit_logistic(d)?;
    fit_geepers_with(d, score, mode, A21Method::Analytic)
}

/// Outcome stage and sandwich on top of an existing score fit.
pub fn fit_geepers_with(d: &Dataset, score: LogisticFit, mode: Mode, a21: A21Method) -> Result<GeepersFit> {
    let diagnostics = logistic::diagnostics(d, &score, None)?;
    if diagnostics.distinct_scores < 3 {
        log::warn!(
            "principal score takes only {} distinct value(s); effects are weakly identified",
            diagnostics.distinct_scores
        );
    }
    let r = build_imputed_regressor(d, &score.fitted)?;
    let fit = ols::fit_ols(d, &r, mode)?;
    let blk = blocks(d, &score.alpha, &fit.beta, mode, a21)?;
    let vcov = sandwich_vcov(&blk.a11, &blk.a22, &blk.a21, &blk.b11, &blk.b22, &blk.b12)?;

    let layout = Layout::new(mode, d.xy().ncols());
    let (xbar_s0, xbar_s1) = match mode {
        Mode::Plain => (None, None),
        Mode::Interactions => (Some(treated_covariate_means(d, false)), Some(treated_covariate_means(d, true))),
    };
    let (c0, c1) = effect_contrasts(layout, score.alpha.len(), xbar_s0.as_deref(), xbar_s1.as_deref())?;
    let theta = DVector::from_iterator(
        score.alpha.len() + fit.beta.len(),
        score.alpha.iter().chain(&fit.beta).copied(),
    );
    let effects = extract_effects(&theta, &vcov, &c0, &c1);
    Ok(GeepersFit {
        mode,
        logistic: score,
        ols: fit,
        vcov,
        effects,
        xbar_s0,
        xbar_s1,
        diagnostics,
    })
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub iterations: usize,
    /// Largest coordinate displacement from the starting point.
    pub max_shift: f64,
}

/// Newton iterations on `Σ Λ_i(θ) = 0` starting from the two-step fit.
pub fn refine_stacked(d: &Dataset, fit: &GeepersFit, max_iter: usize) -> Result<Refinement> {
    let q = fit.logistic.alpha.len();
    let start: Vec<f64> = fit.logistic.alpha.iter().chain(&fit.ols.beta).copied().collect();
    let mut theta = DVector::from_vec(start.clone());
    let mut iterations = 0;
    for _ in 0..max_iter {
        let (alpha, beta) = theta.as_slice().split_at(q);
        let g = stacked_rows(d, alpha, beta, fit.mode)?.row_sum().transpose();
        if g.amax() < 1e-12 {
            break;
        }
        let blk = blocks(d, alpha, beta, fit.mode, A21Method::Analytic)?;
        let step = blk
            .bread()
            .lu()
            .solve(&g)
            .ok_or_else(|| Error::Singular { context: "stacked Newton step".into(), condition: f64::INFINITY })?;
        theta -= &step;
        iterations += 1;
        if step.amax() < 1e-14 {
            break;
        }
    }
    let max_shift = theta.iter().zip(&start).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (alpha, beta) = theta.as_slice().split_at(q);
    Ok(Refinement { alpha: alpha.to_vec(), beta: beta.to_vec(), iterations, max_shift })
}
