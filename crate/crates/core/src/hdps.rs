//! High-dimensional propensity score covariate generation.
//!
//! For every claims dimension the `n_per_dim` most prevalent codes are kept. Each kept
//! code becomes up to three binary recurrence indicators ("once", "sporadic",
//! "frequent"), every indicator is scored with the Bross multiplicative bias formula,
//! and the `k_total` indicators with the largest `|ln bias|` are selected.
//!
//! All statistics (prevalences, thresholds, 2x2 tables) are computed on a caller-given
//! set of fitting rows only; the resulting thresholds are then applied to every patient.

use std::cmp::Ordering;
use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{ClaimsDimension, CodeColumn, CohortDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdpsConfig {
    /// Codes considered per dimension.
    pub n_per_dim: usize,
    /// Covariates selected in total.
    pub k_total: usize,
    /// Codes with prevalence at or below this value are excluded.
    #[serde(default)]
    pub prevalence_floor: f64,
}

impl HdpsConfig {
    pub fn new(n_per_dim: usize, k_total: usize) -> Self {
        Self {
            n_per_dim,
            k_total,
            prevalence_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_dim == 0 || self.k_total == 0 {
            return Err(Error::Config(format!(
                "hdps needs n_per_dim >= 1 and k_total >= 1, got n={} k={}",
                self.n_per_dim, self.k_total
            )));
        }
        if !(0.0..1.0).contains(&self.prevalence_floor) {
            return Err(Error::Config(format!(
                "prevalence_floor must be in [0,1), got {}",
                self.prevalence_floor
            )));
        }
        Ok(())
    }

    /// Label in the style `k=500, n=200`.
    pub fn label(&self) -> String {
        format!("k={}, n={}", self.k_total, self.n_per_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecurrenceKind {
    Once,
    Sporadic,
    Frequent,
}

impl fmt::Display for RecurrenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecurrenceKind::Once => "once",
            RecurrenceKind::Sporadic => "sporadic",
            RecurrenceKind::Frequent => "frequent",
        })
    }
}

/// Dense-membership view of a set of row indices.
#[derive(Debug, Clone)]
pub struct RowSet {
    len: usize,
    mask: Vec<bool>,
}

impl RowSet {
    pub fn new(rows: &[usize], n: usize) -> Result<Self> {
        let mut mask = vec![false; n];
        for &r in rows {
            if r >= n {
                return Err(Error::invalid(format!("row {r} out of range for {n} patients")));
            }
            mask[r] = true;
        }
        let len = mask.iter().filter(|&&m| m).count();
        Ok(Self { len, mask })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn contains(&self, row: usize) -> bool {
        self.mask[row]
    }
}

/// One binary covariate derived from a code: `column[i] = count[i] >= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCovariate {
    pub dimension: String,
    pub code: String,
    pub kind: RecurrenceKind,
    pub threshold: u32,
    /// Patients (over the whole cohort) whose indicator is 1, ascending.
    pub ones: Vec<u32>,
    pub n_rows: usize,
    /// Number of fitting rows with indicator 1.
    pub fit_ones: usize,
    /// Number of fitting rows.
    pub fit_rows: usize,
}

impl CandidateCovariate {
    pub fn column(&self) -> Vec<u8> {
        let mut out = vec![0; self.n_rows];
        for &r in &self.ones {
            out[r as usize] = 1;
        }
        out
    }

    pub fn fit_prevalence(&self) -> f64 {
        self.fit_ones as f64 / self.fit_rows as f64
    }

    fn balance(&self) -> usize {
        self.fit_ones.min(self.fit_rows - self.fit_ones)
    }

    pub fn feature_name(&self) -> String {
        format!("hdps:{}:{}:{}", self.dimension, self.code, self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasScore {
    pub pc1: f64,
    pub pc0: f64,
    pub rr: f64,
    pub bias: f64,
    pub abs_log_bias: f64,
}

impl BiasScore {
    /// Bross multiplicative bias for covariate prevalences `pc1`/`pc0` among
    /// treated/untreated and a direction-folded outcome risk ratio `rr >= 1`.
    pub fn from_parts(pc1: f64, pc0: f64, rr: f64) -> Self {
        let bias = (pc1 * (rr - 1.0) + 1.0) / (pc0 * (rr - 1.0) + 1.0);
        Self {
            pc1,
            pc0,
            rr,
            bias,
            abs_log_bias: bias.ln().abs(),
        }
    }
}

/// Probability clamp applied to both conditional outcome risks.
pub const RISK_CLAMP: f64 = 1e-6;

fn prevalence_counts(dim: &ClaimsDimension, rows: &RowSet) -> Vec<usize> {
    dim.columns()
        .iter()
        .map(|c| c.iter().filter(|&(r, _)| rows.contains(r)).count())
        .collect()
}

fn screen_with_mask(dim: &ClaimsDimension, n_per_dim: usize, rows: &RowSet, floor: f64) -> Vec<usize> {
    let m = rows.len();
    let counts = prevalence_counts(dim, rows);
    let mut keep: Vec<usize> = (0..dim.n_codes())
        .filter(|&i| counts[i] > 0 && counts[i] as f64 / m as f64 > floor)
        .collect();
    // min(p, 1-p) compared exactly through integer counts
    keep.sort_by(|&a, &b| {
        let sa = counts[a].min(m - counts[a]);
        let sb = counts[b].min(m - counts[b]);
        sb.cmp(&sa).then_with(|| dim.codes()[a].cmp(&dim.codes()[b]))
    });
    keep.truncate(n_per_dim);
    keep
}

/// Indices of the `n_per_dim` codes of `dim` whose prevalence over `rows` is closest to
/// one half, ties broken by code name. Codes with prevalence at or below
/// `prevalence_floor` are excluded.
pub fn screen_prevalence(
    dim: &ClaimsDimension,
    n_per_dim: usize,
    rows: &[usize],
    prevalence_floor: f64,
) -> Result<Vec<usize>> {
    if rows.is_empty() {
        return Err(Error::invalid("screen_prevalence needs at least one row"));
    }
    let mask = RowSet::new(rows, dim.n_rows())?;
    Ok(screen_with_mask(dim, n_per_dim, &mask, prevalence_floor))
}

/// Nearest-rank quantile of an ascending slice: element `ceil(q*m)` (1-based).
pub fn nearest_rank(sorted: &[u32], q: f64) -> u32 {
    let m = sorted.len();
    let idx = ((q * m as f64).ceil() as usize).clamp(1, m);
    sorted[idx - 1]
}

/// Recurrence thresholds (once, sporadic, frequent) from the nonzero counts.
pub fn recurrence_thresholds(nonzero_counts: &mut [u32]) -> [u32; 3] {
    nonzero_counts.sort_unstable();
    [1, nearest_rank(nonzero_counts, 0.5), nearest_rank(nonzero_counts, 0.75)]
}

fn expand_with_mask(
    dimension: &str,
    code: &str,
    counts: &CodeColumn,
    n_rows: usize,
    rows: &RowSet,
) -> Result<Vec<CandidateCovariate>> {
    let mut fit_counts: Vec<u32> = counts
        .iter()
        .filter(|&(r, _)| rows.contains(r))
        .map(|(_, c)| c)
        .collect();
    if fit_counts.is_empty() {
        return Err(Error::invalid(format!(
            "code {dimension}:{code} never occurs in the fitting rows"
        )));
    }
    let thresholds = recurrence_thresholds(&mut fit_counts);
    let kinds = [RecurrenceKind::Once, RecurrenceKind::Sporadic, RecurrenceKind::Frequent];
    let mut out: Vec<CandidateCovariate> = Vec::with_capacity(3);
    for (kind, threshold) in kinds.into_iter().zip(thresholds) {
        // Indicators of one code are nested, so equal fitting-row counts mean equal columns.
        let fit_ones = fit_counts.iter().filter(|&&c| c >= threshold).count();
        if out.iter().any(|c| c.fit_ones == fit_ones) {
            continue;
        }
        let ones = counts
            .iter()
            .filter(|&(_, c)| c >= threshold)
            .map(|(r, _)| r as u32)
            .collect();
        out.push(CandidateCovariate {
            dimension: dimension.to_string(),
            code: code.to_string(),
            kind,
            threshold,
            ones,
            n_rows,
            fit_ones,
            fit_rows: rows.len(),
        });
    }
    Ok(out)
}

/// Expands one code into its distinct recurrence indicators, with thresholds taken
/// from the code's nonzero counts over `rows`.
pub fn expand_recurrence(
    dimension: &str,
    code: &str,
    counts: &CodeColumn,
    n_rows: usize,
    rows: &[usize],
) -> Result<Vec<CandidateCovariate>> {
    let mask = RowSet::new(rows, n_rows)?;
    expand_with_mask(dimension, code, counts, n_rows, &mask)
}

struct GroupTotals {
    treated: usize,
    untreated: usize,
    events: usize,
}

impl GroupTotals {
    fn new(treatment: &[u8], outcome: &[u8], rows: &RowSet) -> Result<Self> {
        let (mut treated, mut events) = (0, 0);
        for (i, (&t, &y)) in treatment.iter().zip(outcome).enumerate() {
            if rows.contains(i) {
                treated += t as usize;
                events += y as usize;
            }
        }
        let untreated = rows.len() - treated;
        if treated == 0 || untreated == 0 {
            return Err(Error::invalid(
                "bias scoring needs both treated and untreated fitting rows",
            ));
        }
        Ok(Self {
            treated,
            untreated,
            events,
        })
    }
}

fn score_with_totals(
    cov: &CandidateCovariate,
    treatment: &[u8],
    outcome: &[u8],
    rows: &RowSet,
    totals: &GroupTotals,
) -> BiasScore {
    let (mut c_t1, mut c_y1, mut c_n) = (0usize, 0usize, 0usize);
    for &r in &cov.ones {
        let r = r as usize;
        if rows.contains(r) {
            c_n += 1;
            c_t1 += treatment[r] as usize;
            c_y1 += outcome[r] as usize;
        }
    }
    let c_t0 = c_n - c_t1;
    let nc_n = rows.len() - c_n;
    let nc_y1 = totals.events - c_y1;
    let risk = |events: usize, n: usize| {
        let p = if n == 0 { 0.0 } else { events as f64 / n as f64 };
        p.clamp(RISK_CLAMP, 1.0 - RISK_CLAMP)
    };
    let r = risk(c_y1, c_n) / risk(nc_y1, nc_n);
    BiasScore::from_parts(
        c_t1 as f64 / totals.treated as f64,
        c_t0 as f64 / totals.untreated as f64,
        r.max(1.0 / r),
    )
}

/// Bross bias score of a covariate over `rows`.
pub fn bross_score(cov: &CandidateCovariate, treatment: &[u8], outcome: &[u8], rows: &[usize]) -> Result<BiasScore> {
    if treatment.len() != cov.n_rows || outcome.len() != cov.n_rows {
        return Err(Error::invalid("label length differs from covariate length"));
    }
    let mask = RowSet::new(rows, cov.n_rows)?;
    let totals = GroupTotals::new(treatment, outcome, &mask)?;
    Ok(score_with_totals(cov, treatment, outcome, &mask, &totals))
}

/// Ordering used to rank scored candidates: larger `|ln bias|` first, then the more
/// balanced prevalence, then dimension, code and kind.
pub fn candidate_order(a: &(CandidateCovariate, BiasScore), b: &(CandidateCovariate, BiasScore)) -> Ordering {
    b.1.abs_log_bias
        .total_cmp(&a.1.abs_log_bias)
        .then_with(|| b.0.balance().cmp(&a.0.balance()))
        .then_with(|| a.0.dimension.cmp(&b.0.dimension))
        .then_with(|| a.0.code.cmp(&b.0.code))
        .then_with(|| a.0.kind.cmp(&b.0.kind))
}

/// Every screened candidate with its score, in selection order.
pub fn rank_candidates(
    data: &CohortDataset,
    config: &HdpsConfig,
    rows: &[usize],
) -> Result<Vec<(CandidateCovariate, BiasScore)>> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::invalid("hdps selection needs fitting rows"));
    }
    let n = data.n_patients();
    let mask = RowSet::new(rows, n)?;
    if data.dimensions().is_empty() {
        return Ok(Vec::new());
    }
    let totals = GroupTotals::new(data.treatment(), data.outcome(), &mask)?;
    let screened: Vec<(&ClaimsDimension, usize)> = data
        .dimensions()
        .iter()
        .flat_map(|d| {
            screen_with_mask(d, config.n_per_dim, &mask, config.prevalence_floor)
                .into_iter()
                .map(move |i| (d, i))
        })
        .collect();
    let scored: Vec<Vec<(CandidateCovariate, BiasScore)>> = screened
        .par_iter()
        .map(|&(d, i)| {
            let cands = expand_with_mask(d.name(), &d.codes()[i], d.column(i), n, &mask)?;
            Ok(cands
                .into_iter()
                .map(|c| {
                    let s = score_with_totals(&c, data.treatment(), data.outcome(), &mask, &totals);
                    (c, s)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<_> = scored.into_iter().flatten().collect();
    all.sort_by(candidate_order);
    Ok(all)
}

/// Selects the top `k_total` covariates using statistics from `rows` and materializes
/// them for every patient as an `N x k'` 0/1 matrix.
pub fn select_covariates(
    data: &CohortDataset,
    config: &HdpsConfig,
    rows: &[usize],
) -> Result<(Array2<f64>, Vec<(CandidateCovariate, BiasScore)>)> {
    let mut ranked = rank_candidates(data, config, rows)?;
    ranked.truncate(config.k_total);
    let mut x = Array2::zeros((data.n_patients(), ranked.len()));
    for (j, (c, _)) in ranked.iter().enumerate() {
        for &r in &c.ones {
            x[[r as usize, j]] = 1.0;
        }
    }
    Ok((x, ranked))
}

/// A selected covariate as stored in a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedCovariate {
    pub dimension: String,
    pub code: String,
    pub kind: RecurrenceKind,
    pub threshold: u32,
    pub score: BiasScore,
    pub rank: usize,
}

/// Frozen covariate selection: thresholds learned on fitting rows, applicable to any cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdpsSelection {
    pub config: HdpsConfig,
    pub covariates: Vec<SelectedCovariate>,
}

impl HdpsSelection {
    pub fn fit(data: &CohortDataset, config: &HdpsConfig, rows: &[usize]) -> Result<Self> {
        let mut ranked = rank_candidates(data, config, rows)?;
        ranked.truncate(config.k_total);
        Ok(Self::from_ranked(*config, &ranked))
    }

    pub fn from_ranked(config: HdpsConfig, ranked: &[(CandidateCovariate, BiasScore)]) -> Self {
        let covariates = ranked
            .iter()
            .enumerate()
            .map(|(i, (c, s))| SelectedCovariate {
                dimension: c.dimension.clone(),
                code: c.code.clone(),
                kind: c.kind,
                threshold: c.threshold,
                score: *s,
                rank: i + 1,
            })
            .collect();
        Self { config, covariates }
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.covariates
            .iter()
            .map(|c| format!("hdps:{}:{}:{}", c.dimension, c.code, c.kind))
            .collect()
    }

    /// Applies the stored thresholds to `rows` of `data`. Codes absent from `data` give
    /// all-zero columns.
    pub fn transform(&self, data: &CohortDataset, rows: &[usize]) -> Array2<f64> {
        let mut x = Array2::zeros((rows.len(), self.covariates.len()));
        for (j, c) in self.covariates.iter().enumerate() {
            let Some(dim) = data.dimensions().iter().find(|d| d.name() == c.dimension) else {
                continue;
            };
            let Some(idx) = dim.code_index(&c.code) else {
                continue;
            };
            let col = dim.column(idx);
            for (i, &r) in rows.iter().enumerate() {
                if col.get(r) >= c.threshold {
                    x[[i, j]] = 1.0;
                }
            }
        }
        x
    }
}

/// Writes selection metadata as CSV:
/// `dimension,code,kind,threshold,pc1,pc0,rr,bias,abs_log_bias,rank`.
pub fn write_selection_csv<W: std::io::Write>(sel: &HdpsSelection, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "dimension",
        "code",
        "kind",
        "threshold",
        "pc1",
        "pc0",
        "rr",
        "bias",
        "abs_log_bias",
        "rank",
    ])?;
    for c in &sel.covariates {
        w.write_record([
            c.dimension.clone(),
            c.code.clone(),
            c.kind.to_string(),
            c.threshold.to_string(),
            c.score.pc1.to_string(),
            c.score.pc0.to_string(),
            c.score.rr.to_string(),
            c.score.bias.to_string(),
            c.score.abs_log_bias.to_string(),
            c.rank.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<selection>", e))?;
    Ok(())
}
