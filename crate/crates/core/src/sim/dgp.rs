//! Data generation for simulation cells.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::logistic::{InverseLink, LINK};
use crate::ols::StratumMeans;
use crate::sim::cell::{ErrorDist, SimCell};
use crate::sim::rng::{self, Purpose};

/// Latent quantities behind a simulated dataset.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub s_t: Vec<bool>,
    pub x3: Vec<f64>,
    /// True principal score.
    pub e: Vec<f64>,
    pub y_t: Vec<f64>,
    pub y_c: Vec<f64>,
    pub eps: Vec<f64>,
    pub tau0: f64,
    pub tau1: f64,
}

pub type Sampler = Box<dyn Fn(&mut dyn rand::RngCore) -> f64>;

pub fn residual_sampler(dist: ErrorDist) -> Sampler {
    match dist {
        ErrorDist::Normal => {
            let d = Normal::new(0.0, 0.5f64.sqrt()).expect("valid normal");
            Box::new(move |r| d.sample(r))
        }
        ErrorDist::Uniform => {
            let h = 6f64.sqrt() / 2.0;
            let d = Uniform::new(-h, h).expect("valid uniform");
            Box::new(move |r| d.sample(r))
        }
    }
}

struct Draws {
    x: [Vec<f64>; 3],
    e: Vec<f64>,
    s_t: Vec<bool>,
    eps: Vec<f64>,
}

fn draw(n_total: usize, alpha: f64, dist: ErrorDist, rng: &mut impl Rng) -> Draws {
    let sample_eps = residual_sampler(dist);
    let mut x = [Vec::with_capacity(n_total), Vec::with_capacity(n_total), Vec::with_capacity(n_total)];
    let mut e = Vec::with_capacity(n_total);
    let mut s_t = Vec::with_capacity(n_total);
    let mut eps = Vec::with_capacity(n_total);
    for _ in 0..n_total {
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.sample(StandardNormal);
        let x3: f64 = rng.sample(StandardNormal);
        let p = LINK.f(alpha * (x1 - x2 + x3));
        s_t.push(rng.random::<f64>() < p);
        eps.push(sample_eps(rng));
        x[0].push(x1);
        x[1].push(x2);
        x[2].push(x3);
        e.push(p);
    }
    Draws { x, e, s_t, eps }
}

fn columns(cols: &[&Vec<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Draws replicate `rep` of a cell: `n` treated units followed by `n` controls.
/// Only `x₁` and `x₂` are exposed as covariates.
pub fn generate(cell: &SimCell, rep: u64) -> Result<(Dataset, SimTruth)> {
    cell.validate()?;
    let mut rng = rng::stream(cell.seed, cell.id_hash(), rep, Purpose::Data);
    let n_total = 2 * cell.n;
    let dr = draw(n_total, cell.alpha, cell.errdist, &mut rng);
    let c = cell.coefficients();
    let root6 = 6f64.sqrt();
    let mut y = Vec::with_capacity(n_total);
    let mut y_t = Vec::with_capacity(n_total);
    let mut y_c = Vec::with_capacity(n_total);
    let mut z = Vec::with_capacity(n_total);
    let mut s = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let st = if dr.s_t[i] { 1.0 } else { 0.0 };
        let sum12 = dr.x[0][i] + dr.x[1][i];
        let common = c.beta1 * st + (c.gamma1 + c.gamma2 * st) * sum12 + dr.x[2][i] / root6 + dr.eps[i];
        let treated_value = common + c.beta3 * st + c.gamma3 * sum12;
        let treated = i < cell.n;
        y_t.push(treated_value);
        y_c.push(common);
        y.push(if treated { treated_value } else { common });
        z.push(treated);
        s.push(treated.then_some(dr.s_t[i]));
    }
    let x = columns(&[&dr.x[0], &dr.x[1]]);
    let d = Dataset::new(y, z, s, x.clone(), x, names(&["x1", "x2"]), names(&["x1", "x2"]))?;
    let (tau0, tau1) = cell.true_effects();
    let [_, _, x3] = dr.x;
    Ok((d, SimTruth { s_t: dr.s_t, x3, e: dr.e, y_t, y_c, eps: dr.eps, tau0, tau1 }))
}

/// Stratum means of [`generate_ci`] data.
pub fn ci_means(beta1: f64) -> StratumMeans {
    StratumMeans { mu_c0: 0.0, mu_c1: beta1, mu_t0: 0.0, mu_t1: 0.3 }
}

/// A design where outcomes depend on covariates only through the stratum and
/// all three covariates enter the score model, so true scores are estimable.
pub fn generate_ci(n: usize, alpha: f64, beta1: f64, seed: u64) -> Result<(Dataset, SimTruth)> {
    if n < 2 {
        return Err(Error::InvalidData("n must be at least 2".into()));
    }
    let mut rng = rng::stream(seed, rng::mix(&[n as u64, alpha.to_bits(), beta1.to_bits()]), 0, Purpose::Data);
    let n_total = 2 * n;
    let dr = draw(n_total, alpha, ErrorDist::Normal, &mut rng);
    let beta3 = 0.3 - beta1;
    let mut y = Vec::with_capacity(n_total);
    let mut y_t = Vec::with_capacity(n_total);
    let mut y_c = Vec::with_capacity(n_total);
    let mut z = Vec::with_capacity(n_total);
    let mut s = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let st = if dr.s_t[i] { 1.0 } else { 0.0 };
        let yc = beta1 * st + dr.eps[i];
        let yt = yc + beta3 * st;
        let treated = i < n;
        y_t.push(yt);
        y_c.push(yc);
        y.push(if treated { yt } else { yc });
        z.push(treated);
        s.push(treated.then_some(dr.s_t[i]));
    }
    let xs = columns(&[&dr.x[0], &dr.x[1], &dr.x[2]]);
    let xy = columns(&[&dr.x[0], &dr.x[1]]);
    let d = Dataset::new(y, z, s, xs, xy, names(&["x1", "x2", "x3"]), names(&["x1", "x2"]))?;
    let [_, _, x3] = dr.x;
    Ok((d, SimTruth { s_t: dr.s_t, x3, e: dr.e, y_t, y_c, eps: dr.eps, tau0: 0.0, tau1: beta3 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn residual_variance_is_one_half() {
        for dist in [ErrorDist::Normal, ErrorDist::Uniform] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let f = residual_sampler(dist);
            let v: Vec<f64> = (0..1_000_000).map(|_| f(&mut rng)).collect();
            let (m, var) = moments(&v);
            assert!(m.abs() < 0.005 && (var - 0.5).abs() < 0.005, "{dist:?} {m} {var}");
        }
    }

    #[test]
    fn alpha_zero_gives_constant_scores() {
        let cell = SimCell { n: 50, alpha: 0.0, ..SimCell::default() };
        let (_, t) = generate(&cell, 0).unwrap();
        assert!(t.e.iter().all(|&e| e == 0.5));
    }

    #[test]
    fn observed_covariates_explain_a_third() {
        let cell = SimCell { n: 500_000, ..SimCell::default() };
        let (d, t) = generate(&cell, 0).unwrap();
        let g1 = cell.coefficients().gamma1;
        let total: Vec<f64> = (0..d.n())
            .map(|i| g1 * (d.xy()[(i, 0)] + d.xy()[(i, 1)]) + t.x3[i] / 6f64.sqrt() + t.eps[i])
            .collect();
        let observed: Vec<f64> = (0..d.n()).map(|i| g1 * (d.xy()[(i, 0)] + d.xy()[(i, 1)])).collect();
        let share = moments(&observed).1 / moments(&total).1;
        assert!((share - 1.0 / 3.0).abs() < 0.02 / 3.0, "{share}");
    }

    #[test]
    fn layout_and_observability() {
        let cell = SimCell { n: 40, zx_interaction: true, ..SimCell::default() };
        let (d, t) = generate(&cell, 3).unwrap();
        assert_eq!((d.n_treated(), d.n_control()), (40, 40));
        assert_eq!(d.xs_names(), ["x1", "x2"]);
        for i in 0..d.n() {
            let y = if d.z()[i] { t.y_t[i] } else { t.y_c[i] };
            assert_eq!(d.y()[i], y);
            assert_eq!(d.s()[i], d.z()[i].then_some(t.s_t[i]));
        }
        let again = generate(&cell, 3).unwrap().0;
        assert_eq!(again.y(), d.y());
        assert_ne!(generate(&cell, 4).unwrap().0.y(), d.y());
    }

    #[test]
    fn truth_in_interaction_cells_matches_monte_carlo() {
        // Population contrasts E[Y_T − Y_C | S_T = s] from the potential outcomes.
        for (sx, zx) in [(false, true), (true, true), (true, false)] {
            let cell = SimCell { n: 500_000, sz_interaction: sx, zx_interaction: zx, beta1: 0.0, ..SimCell::default() };
            let (_, t) = generate(&cell, 0).unwrap();
            let effect = |s: bool| {
                let v: Vec<f64> = (0..t.s_t.len()).filter(|&i| t.s_t[i] == s).map(|i| t.y_t[i] - t.y_c[i]).collect();
                moments(&v)
            };
            let (tau0, tau1) = cell.true_effects();
            for (s, truth) in [(false, tau0), (true, tau1)] {
                let (m, var) = effect(s);
                let se = (var / 500_000.0).sqrt();
                assert!((m - truth).abs() < 4.0 * se + 1e-12, "{sx} {zx} {s}: {m} vs {truth}");
            }
        }
    }

    #[test]
    fn ci_design_exposes_all_score_covariates() {
        let (d, t) = generate_ci(100, 0.5, 0.3, 1).unwrap();
        assert_eq!(d.xs().ncols(), 3);
        assert_eq!(t.tau1, 0.0);
        assert!(generate_ci(1, 0.5, 0.3, 1).is_err());
    }
}
