//! Negative log-likelihood, ROC AUC and wall-clock timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clipped to `[PROB_EPS, 1 - PROB_EPS]` before any logarithm.
pub const PROB_EPS: f64 = 1e-15;

#[inline]
pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Mean Bernoulli negative log-likelihood.
pub fn nll(p: &[f64], y: &[u8]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::invalid(format!(
            "nll: {} predictions for {} labels",
            p.len(),
            y.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::invalid("nll of an empty vector"));
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clip_prob(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / p.len() as f64)
}

fn class_counts(y: &[u8]) -> (u64, u64) {
    let pos = y.iter().filter(|&&v| v == 1).count() as u64;
    (pos, y.len() as u64 - pos)
}

fn sorted_order(p: &[f64]) -> Result<Vec<usize>> {
    if p.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    Ok(order)
}

/// Mann-Whitney AUC with half credit for tied (positive, negative) pairs.
///
/// The numerator is accumulated as an integer count of half-pairs over tie groups,
/// so the result is exact up to the final division.
pub fn auc(p: &[f64], y: &[u8]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::invalid("auc: length mismatch"));
    }
    let (n_pos, n_neg) = class_counts(y);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(y.len()));
    }
    let order = sorted_order(p)?;
    let mut half_pairs: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && p[order[j]] == p[order[i]] {
            if y[order[j]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        half_pairs += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok(half_pairs as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

/// ROC curve with one point per distinct score threshold, from (0,0) to (1,1).
pub fn roc_points(p: &[f64], y: &[u8]) -> Result<Vec<(f64, f64)>> {
    if p.len() != y.len() {
        return Err(Error::invalid("roc: length mismatch"));
    }
    let (n_pos, n_neg) = class_counts(y);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(y.len()));
    }
    let mut order = sorted_order(p)?;
    order.reverse();
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = p[order[i]];
        while i < order.len() && p[order[i]] == s {
            if y[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a piecewise-linear curve.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum()
}

/// Runs `thunk` and reports its monotonic wall-clock time in seconds. On failure the
/// error is wrapped with the elapsed time.
pub fn timed_fit<T>(thunk: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = thunk();
    let seconds = start.elapsed().as_secs_f64();
    match out {
        Ok(v) => Ok((v, seconds)),
        Err(e) => Err(Error::Timed {
            seconds,
            source: Box::new(e),
        }),
    }
}

/// One row of a benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub nll_train: f64,
    pub nll_test: f64,
    pub auc_train: f64,
    pub auc_test: f64,
    pub seconds: f64,
}

impl EvalReport {
    pub const CSV_COLUMNS: [&'static str; 6] = ["method", "nll_train", "nll_test", "auc_train", "auc_test", "seconds"];

    pub fn from_predictions(
        method: impl Into<String>,
        train: (&[f64], &[u8]),
        test: (&[f64], &[u8]),
        seconds: f64,
    ) -> Result<Self> {
        let r = Self {
            method: method.into(),
            nll_train: nll(train.0, train.1)?,
            nll_test: nll(test.0, test.1)?,
            auc_train: auc(train.0, train.1)?,
            auc_test: auc(test.0, test.1)?,
            seconds,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.nll_train,
            self.nll_test,
            self.auc_train,
            self.auc_test,
            self.seconds,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("evaluation report"));
        }
        if ![self.auc_train, self.auc_test].iter().all(|a| (0.0..=1.0).contains(a)) || self.seconds < 0.0 {
            return Err(Error::invalid(format!("report row {} out of range", self.method)));
        }
        Ok(())
    }
}

pub fn write_reports_csv<W: std::io::Write>(rows: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

/// Reads a report CSV, checking the exact column layout and every row's ranges.
pub fn read_reports_csv<R: std::io::Read>(input: R) -> Result<Vec<EvalReport>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(EvalReport::CSV_COLUMNS) {
        return Err(Error::Schema(format!("unexpected report columns {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: EvalReport = rec?;
        row.validate()?;
        rows.push(row);
    }
    Ok(rows)
}
