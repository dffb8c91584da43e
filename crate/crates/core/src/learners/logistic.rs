//! Logistic regression: Newton/IRLS for the unpenalized model and proximal-Newton
//! coordinate descent for the L1-penalized one.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::linalg::solve_spd;
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn linear_predictor(x: ArrayView2<'_, f64>, intercept: f64, coef: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut eta = x.dot(&coef);
    eta.mapv_inplace(|v| v + intercept);
    eta
}

fn mean_nll_from_eta(eta: &Array1<f64>, y: &[f64]) -> f64 {
    eta.iter().zip(y).map(|(&e, &y)| softplus(e) - y * e).sum::<f64>() / y.len() as f64
}

/// Mean logistic negative log-likelihood and its gradient with respect to
/// `(intercept, coef)`.
pub fn nll_and_grad(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    intercept: f64,
    coef: ArrayView1<'_, f64>,
) -> (f64, f64, Array1<f64>) {
    let eta = linear_predictor(x, intercept, coef);
    let n = y.len() as f64;
    let value = mean_nll_from_eta(&eta, y);
    let resid: Array1<f64> = eta.iter().zip(y).map(|(&e, &y)| sigmoid(e) - y).collect();
    let g0 = resid.sum() / n;
    let g = x.t().dot(&resid) / n;
    (value, g0, g)
}

pub const GLM_MAX_ITER: usize = 100;
pub const GLM_REL_TOL: f64 = 1e-8;

/// Intercept-first design matrix.
fn with_intercept(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut a = Array2::ones((x.nrows(), x.ncols() + 1));
    a.slice_mut(s![.., 1..]).assign(&x);
    a
}

fn logit_of_mean(y: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    (m / (1.0 - m)).ln()
}

/// Newton/IRLS on the mean NLL. Stops when the relative NLL change drops below
/// [`GLM_REL_TOL`] or after [`GLM_MAX_ITER`] iterations. A singular Hessian is
/// regularized by the escalating ridge in [`solve_spd`]; steps that fail to decrease
/// the objective are halved.
pub fn fit_glm(x: ArrayView2<'_, f64>, y: &[f64]) -> Result<(f64, Array1<f64>)> {
    let n = y.len() as f64;
    let a = with_intercept(x);
    let mut beta = Array1::zeros(a.ncols());
    beta[0] = logit_of_mean(y);
    let mut eta = a.dot(&beta);
    let mut f = mean_nll_from_eta(&eta, y);
    for _ in 0..GLM_MAX_ITER {
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let grad = a.t().dot(&Array1::from_iter(p.iter().zip(y).map(|(p, y)| p - y))) / n;
        let sw: Array1<f64> = p.iter().map(|p| (p * (1.0 - p)).sqrt()).collect();
        let aw = &a * &sw.view().insert_axis(Axis(1));
        let hess = aw.t().dot(&aw) / n;
        let Some((step, _ridge)) = solve_spd(&hess, &grad) else {
            return Err(Error::Numerical("logistic Hessian could not be factored".into()));
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta - &(&step * t);
            let cand_eta = a.dot(&cand);
            let cf = mean_nll_from_eta(&cand_eta, y);
            if cf.is_finite() && cf <= f {
                accepted = Some((cand, cand_eta, cf));
                break;
            }
            t *= 0.5;
        }
        let Some((nb, ne, nf)) = accepted else {
            break;
        };
        let rel = (f - nf) / f.abs().max(f64::MIN_POSITIVE);
        beta = nb;
        eta = ne;
        f = nf;
        if rel < GLM_REL_TOL {
            break;
        }
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("logistic coefficients diverged".into()));
    }
    Ok((beta[0], beta.slice(s![1..]).to_owned()))
}

/// Largest penalty for which the L1 solution has any nonzero slope.
pub fn lambda_max(x: ArrayView2<'_, f64>, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let r = Array1::from_iter(y.iter().map(|y| y - mean));
    x.t().dot(&r).iter().fold(0.0f64, |m, v| m.max(v.abs() / n))
}

/// Largest violation of the L1-logistic optimality conditions at `(intercept, coef)`.
pub fn lasso_kkt_violation(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    intercept: f64,
    coef: ArrayView1<'_, f64>,
    lambda: f64,
) -> f64 {
    let (_, g0, g) = nll_and_grad(x, y, intercept, coef);
    g.iter().zip(coef).fold(g0.abs(), |m, (&gj, &bj)| {
        let v = if bj == 0.0 {
            (gj.abs() - lambda).max(0.0)
        } else {
            (gj + lambda * bj.signum()).abs()
        };
        m.max(v)
    })
}

pub const LASSO_KKT_TOL: f64 = 1e-7;
const LASSO_MAX_OUTER: usize = 200;
const LASSO_SWEEP_BUDGET: usize = 1500;
const LASSO_INNER_TOL: f64 = 1e-12;

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Column-major copy of the design used by coordinate descent.
pub(crate) struct LassoProblem<'a> {
    cols: Array2<f64>,
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
}

impl<'a> LassoProblem<'a> {
    pub(crate) fn new(x: ArrayView2<'a, f64>, y: &'a [f64]) -> Self {
        Self {
            cols: x.t().as_standard_layout().into_owned(),
            x,
            y,
        }
    }

    pub(crate) fn lambda_max(&self) -> f64 {
        lambda_max(self.x, self.y)
    }

    fn objective(&self, eta: &Array1<f64>, coef: &Array1<f64>, lambda: f64) -> f64 {
        mean_nll_from_eta(eta, self.y) + lambda * coef.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Cold start at the intercept-only model.
    pub(crate) fn start(&self) -> (f64, Array1<f64>) {
        (logit_of_mean(self.y), Array1::zeros(self.cols.nrows()))
    }

    /// Minimizes mean NLL + `lambda * |coef|_1` from a warm start.
    pub(crate) fn solve(&self, lambda: f64, start: (f64, Array1<f64>)) -> Result<(f64, Array1<f64>)> {
        let n = self.y.len();
        let nf = n as f64;
        let p = self.cols.nrows();
        let (mut b0, mut beta) = start;
        let mut eta = linear_predictor(self.x, b0, beta.view());
        let mut f = self.objective(&eta, &beta, lambda);
        // coordinate sweeps allowed per solve; near-unpenalized fits on separable data
        // would otherwise chase diverging coefficients
        let mut budget = LASSO_SWEEP_BUDGET;

        for _ in 0..LASSO_MAX_OUTER {
            if budget == 0 {
                break;
            }
            let kkt = lasso_kkt_violation(self.x, self.y, b0, beta.view(), lambda);
            if kkt < LASSO_KKT_TOL {
                break;
            }
            // inexact inner solves far from the optimum, tighter as the KKT gap closes
            let inner_tol = (1e-2 * kkt).clamp(LASSO_INNER_TOL, 1e-4);
            let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
            let w: Vec<f64> = prob.iter().map(|p| (p * (1.0 - p)).max(1e-5)).collect();
            // residual of the quadratic model: z - eta
            let mut r: Vec<f64> = self
                .y
                .iter()
                .zip(&prob)
                .zip(&w)
                .map(|((y, p), w)| (y - p) / w)
                .collect();
            let wsum: f64 = w.iter().sum();
            let curv: Vec<f64> = (0..p)
                .map(|j| self.cols.row(j).iter().zip(&w).map(|(x, w)| w * x * x).sum::<f64>() / nf)
                .collect();
            let (mut nb0, mut nbeta) = (b0, beta.clone());

            let sweep = |active_only: bool, nb0: &mut f64, nbeta: &mut Array1<f64>, r: &mut Vec<f64>| {
                let mut max_change = 0.0f64;
                let d0 = r.iter().zip(&w).map(|(r, w)| r * w).sum::<f64>() / wsum;
                if d0 != 0.0 {
                    *nb0 += d0;
                    r.iter_mut().for_each(|v| *v -= d0);
                    max_change = max_change.max(d0.abs() * (wsum / nf).sqrt());
                }
                for j in 0..p {
                    let old = nbeta[j];
                    if (active_only && old == 0.0) || curv[j] <= 0.0 {
                        continue;
                    }
                    let col = self.cols.row(j);
                    let c = col
                        .iter()
                        .zip(r.iter())
                        .zip(&w)
                        .map(|((x, r), w)| w * x * r)
                        .sum::<f64>()
                        / nf
                        + curv[j] * old;
                    let new = soft_threshold(c, lambda) / curv[j];
                    let d = new - old;
                    if d != 0.0 {
                        nbeta[j] = new;
                        for (ri, xi) in r.iter_mut().zip(col) {
                            *ri -= d * xi;
                        }
                        max_change = max_change.max(d.abs() * curv[j].sqrt());
                    }
                }
                max_change
            };

            loop {
                let full = sweep(false, &mut nb0, &mut nbeta, &mut r);
                budget = budget.saturating_sub(1);
                if full < inner_tol || budget == 0 {
                    break;
                }
                loop {
                    let act = sweep(true, &mut nb0, &mut nbeta, &mut r);
                    budget = budget.saturating_sub(1);
                    if act < inner_tol || budget == 0 {
                        break;
                    }
                }
            }

            // backtracking along the proximal-Newton direction
            let d0 = nb0 - b0;
            let dbeta = &nbeta - &beta;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cb0 = b0 + t * d0;
                let cbeta = &beta + &(&dbeta * t);
                let ceta = linear_predictor(self.x, cb0, cbeta.view());
                let cf = self.objective(&ceta, &cbeta, lambda);
                if cf.is_finite() && cf <= f {
                    let stalled = f - cf <= 1e-16 * f.abs();
                    b0 = cb0;
                    beta = cbeta;
                    eta = ceta;
                    f = cf;
                    accepted = !stalled || t == 1.0;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if !b0.is_finite() || beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("lasso coefficients diverged".into()));
        }
        Ok((b0, beta))
    }
}

/// L1-penalized logistic fit for a single penalty, cold-started at the intercept-only model.
pub fn fit_lasso(x: ArrayView2<'_, f64>, y: &[f64], lambda: f64) -> Result<(f64, Array1<f64>)> {
    let prob = LassoProblem::new(x, y);
    prob.solve(lambda, prob.start())
}
