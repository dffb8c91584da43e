use ndarray::{Array1, Array2, ArrayView2};

use super::linalg::solve_spd;
use crate::error::{Error, Result};

/// Diagonal loading added to the pooled covariance.
pub const LDA_LOADING: f64 = 1e-6;

/// Two-class linear discriminant with pooled covariance. The Gaussian class posterior
/// is logistic in `x`, so the fit is returned as `(intercept, coef)` of the log-odds.
pub fn fit_lda(x: ArrayView2<'_, f64>, y: &[f64]) -> Result<(f64, Array1<f64>)> {
    let (n, p) = x.dim();
    let n1 = y.iter().filter(|&&v| v == 1.0).count();
    let n0 = n - n1;
    let mut mu = [Array1::<f64>::zeros(p), Array1::<f64>::zeros(p)];
    for (row, &yi) in x.rows().into_iter().zip(y) {
        mu[yi as usize] += &row;
    }
    mu[0] /= n0 as f64;
    mu[1] /= n1 as f64;
    let mut centered = x.to_owned();
    for (mut row, &yi) in centered.rows_mut().into_iter().zip(y) {
        row -= &mu[yi as usize];
    }
    let dof = n.saturating_sub(2).max(1) as f64;
    let mut cov: Array2<f64> = centered.t().dot(&centered) / dof;
    cov.diag_mut().iter_mut().for_each(|d| *d += LDA_LOADING);
    let diff = &mu[1] - &mu[0];
    let (coef, _) =
        solve_spd(&cov, &diff).ok_or_else(|| Error::Numerical("pooled covariance could not be factored".into()))?;
    let mid = (&mu[1] + &mu[0]) * 0.5;
    let intercept = (n1 as f64 / n0 as f64).ln() - coef.dot(&mid);
    Ok((intercept, coef))
}
