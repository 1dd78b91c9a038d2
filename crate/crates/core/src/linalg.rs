//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on `|R_kk|` (against the largest column norm) for rank detection.
pub const RANK_TOL: f64 = 1e-10;

/// Hard limit on the equilibrated condition number of matrices we invert.
pub fn max_condition() -> f64 {
    1.0 / f64::EPSILON.sqrt()
}

/// Least squares by Householder QR. Fails naming every column whose component
/// orthogonal to the preceding columns is negligible.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if y.len() != n || names.len() != p {
        return Err(Error::Dimension(format!(
            "least squares: X is {n}x{p}, y has {}, {} names",
            y.len(),
            names.len()
        )));
    }
    check_full_rank(x, names)?;
    let qr = x.clone().qr();
    let r = qr.r();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let qty = qty.rows(0, p).into_owned();
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient {
            columns: names.to_vec(),
        })
}

/// Fails with the offending column names when `x` is not of full column rank.
pub fn check_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let (n, p) = x.shape();
    if n < p {
        return Err(Error::RankDeficient {
            columns: names.to_vec(),
        });
    }
    let max_norm = (0..p).map(|j| x.column(j).norm()).fold(0.0, f64::max);
    let r = x.clone().qr().r();
    let tol = RANK_TOL * max_norm.max(f64::MIN_POSITIVE);
    let bad: Vec<String> = (0..p)
        .filter(|&k| r[(k, k)].abs() <= tol)
        .map(|k| names[k].clone())
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient { columns: bad })
    }
}

/// Condition number of `a` after symmetric diagonal equilibration by `|a_jj|^{-1/2}`.
///
/// The scaling removes units-of-measurement effects so that the limit applies to
/// genuine near-singularity only.
pub fn equilibrated_condition(a: &DMatrix<f64>) -> f64 {
    let p = a.nrows();
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let d = a[(j, j)].abs();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(p, p, |i, j| a[(i, j)] * scale[i] * scale[j]);
    let sv = scaled.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverts a square matrix, failing when the equilibrated condition number
/// exceeds [`max_condition`].
pub fn checked_inverse(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{context}: matrix is not square")));
    }
    let condition = equilibrated_condition(a);
    if !condition.is_finite() || condition > max_condition() {
        return Err(Error::Singular {
            context: context.to_string(),
            condition,
        });
    }
    a.clone().lu().try_inverse().ok_or_else(|| Error::Singular {
        context: context.to_string(),
        condition,
    })
}

/// `(m + m') / 2`
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Sum of outer products `Σ_i a_i b_i'` over matching rows of `a` and `b`.
pub fn cross_outer(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
