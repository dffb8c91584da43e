//! Sample-split Super Learner: library tuning on the LGO training rows, convex NLL
//! weights on the LGO validation rows, and refits on the full training rows.

use std::collections::BTreeSet;
use std::fmt;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{CohortDataset, SplitPlan};
use crate::error::{Error, Result};
use crate::hdps::HdpsConfig;
use crate::learners::{hdps_learner, tune_lgo, CohortModel, FeatureView, HyperParams, Learner, TunedLearner};
use crate::metrics::{clip_prob, nll, PROB_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlPreset {
    Sl1,
    Sl2,
    Sl3,
    Custom,
}

impl fmt::Display for SlPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlPreset::Sl1 => "SL1",
            SlPreset::Sl2 => "SL2",
            SlPreset::Sl3 => "SL3",
            SlPreset::Custom => "custom",
        })
    }
}

/// Covariate set used by SL3.
pub const SL3_HDPS: HdpsConfig = HdpsConfig {
    n_per_dim: 200,
    k_total: 500,
    prevalence_floor: 0.0,
};

#[derive(Debug, Clone)]
pub struct SlLibrary {
    pub preset: SlPreset,
    pub entries: Vec<Learner>,
}

impl SlLibrary {
    pub fn custom(entries: Vec<Learner>) -> Result<Self> {
        Self::build(SlPreset::Custom, entries)
    }

    /// Base learners on baseline covariates only.
    pub fn sl1(base: &[Learner]) -> Result<Self> {
        let entries = base
            .iter()
            .map(|l| l.with_view(l.name.clone(), FeatureView::Baseline))
            .collect::<Result<_>>()?;
        Self::build(SlPreset::Sl1, entries)
    }

    /// SL1 plus one hdPS learner per configuration. Only the hdPS entries see claims.
    pub fn sl2(base: &[Learner], hdps_grid: &[HdpsConfig]) -> Result<Self> {
        let mut entries = Self::sl1(base)?.entries;
        for cfg in hdps_grid {
            entries.push(hdps_learner(*cfg)?);
        }
        Self::build(SlPreset::Sl2, entries)
    }

    /// Base learners on baseline plus one fixed hdPS covariate set.
    pub fn sl3(base: &[Learner], hdps: HdpsConfig) -> Result<Self> {
        let entries = base
            .iter()
            .map(|l| l.with_view(format!("{}+hdps", l.name), FeatureView::BaselineHdps { hdps }))
            .collect::<Result<_>>()?;
        Self::build(SlPreset::Sl3, entries)
    }

    fn build(preset: SlPreset, entries: Vec<Learner>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("Super Learner library is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Config(format!("duplicate library entry {}", e.name)));
            }
        }
        Ok(Self { preset, entries })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub weights: Vec<f64>,
    pub achieved_val_nll: f64,
}

/// Weights below this are zeroed after optimization.
pub const WEIGHT_FLOOR: f64 = 1e-6;
pub const SIMPLEX_MAX_ITER: usize = 10_000;
pub const SIMPLEX_REL_TOL: f64 = 1e-10;

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

struct SimplexObjective<'a> {
    z: ArrayView2<'a, f64>,
    y: &'a [u8],
}

impl SimplexObjective<'_> {
    fn mix(&self, w: &[f64]) -> Vec<f64> {
        self.z
            .rows()
            .into_iter()
            .map(|r| clip_prob(r.iter().zip(w).map(|(a, b)| a * b).sum()))
            .collect()
    }

    fn value(&self, w: &[f64]) -> f64 {
        nll(&self.mix(w), self.y).expect("shapes checked")
    }

    fn value_and_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let q = self.mix(w);
        let m = self.y.len() as f64;
        let mut g = vec![0.0; w.len()];
        for ((row, &qi), &yi) in self.z.rows().into_iter().zip(&q).zip(self.y) {
            let d = if yi == 1 { -1.0 / qi } else { 1.0 / (1.0 - qi) };
            for (gj, zij) in g.iter_mut().zip(row) {
                *gj += d * zij / m;
            }
        }
        (nll(&q, self.y).expect("shapes checked"), g)
    }
}

/// Projected gradient with monotone backtracking from `w`. Returns the final point and
/// the objective after each accepted iteration.
fn descend(obj: &SimplexObjective<'_>, mut w: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let (mut f, mut g) = obj.value_and_grad(&w);
    let mut trace = vec![f];
    let mut step = 1.0;
    for _ in 0..SIMPLEX_MAX_ITER {
        let mut accepted = None;
        while step > 1e-20 {
            let cand = project_simplex(&w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect::<Vec<_>>());
            let diff: Vec<f64> = cand.iter().zip(&w).map(|(a, b)| a - b).collect();
            let lin: f64 = diff.iter().zip(&g).map(|(d, gi)| d * gi).sum();
            let sq: f64 = diff.iter().map(|d| d * d).sum();
            if sq == 0.0 {
                break;
            }
            let fc = obj.value(&cand);
            if fc <= f + lin + sq / (2.0 * step) && fc <= f {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let improvement = (f - fc) / f.abs().max(PROB_EPS);
        w = cand;
        let (fv, gv) = obj.value_and_grad(&w);
        f = fv;
        g = gv;
        trace.push(f);
        if improvement < SIMPLEX_REL_TOL {
            break;
        }
        step *= 2.0;
    }
    (w, trace)
}

fn check_simplex_input(z: ArrayView2<'_, f64>, y: &[u8]) -> Result<()> {
    if z.nrows() != y.len() || z.nrows() == 0 || z.ncols() == 0 {
        return Err(Error::invalid(format!(
            "prediction matrix is {}x{} with {} labels",
            z.nrows(),
            z.ncols(),
            y.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction matrix"));
    }
    Ok(())
}

/// Like [`solve_simplex_nll`], also returning the objective at every accepted iterate.
pub fn solve_simplex_nll_traced(z: ArrayView2<'_, f64>, y: &[u8]) -> Result<(EnsembleWeights, Vec<f64>)> {
    check_simplex_input(z, y)?;
    let obj = SimplexObjective { z, y };
    let j = z.ncols();
    let (mut w, mut trace) = descend(&obj, vec![1.0 / j as f64; j]);

    // Restart from the best vertex if the descent stalled above it.
    let vertex = |k: usize| {
        let mut e = vec![0.0; j];
        e[k] = 1.0;
        e
    };
    let (best_k, best_v) = (0..j)
        .map(|k| (k, obj.value(&vertex(k))))
        .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
    if best_v < obj.value(&w) {
        let (w2, t2) = descend(&obj, vertex(best_k));
        w = w2;
        trace = t2;
    }

    for wi in w.iter_mut() {
        if *wi < WEIGHT_FLOOR {
            *wi = 0.0;
        }
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|wi| *wi /= sum);
    let achieved_val_nll = obj.value(&w);
    Ok((
        EnsembleWeights {
            weights: w,
            achieved_val_nll,
        },
        trace,
    ))
}

/// Minimizes the mean NLL of `z w` over the probability simplex.
pub fn solve_simplex_nll(z: ArrayView2<'_, f64>, y: &[u8]) -> Result<EnsembleWeights> {
    solve_simplex_nll_traced(z, y).map(|(w, _)| w)
}

/// A library entry that was fitted and kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlEntry {
    pub name: String,
    pub is_hdps: bool,
    /// Position of the chosen configuration in the learner's grid.
    pub chosen_index: usize,
    pub chosen: HyperParams,
    pub val_nll: f64,
    pub weight: f64,
    pub model: CohortModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlModel {
    pub preset: SlPreset,
    pub discrete: bool,
    pub entries: Vec<SlEntry>,
    pub achieved_val_nll: f64,
    /// Entries dropped because they failed to fit, with the error message.
    pub dropped: Vec<(String, String)>,
    pub split: SplitPlan,
}

impl SlModel {
    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    /// `sum_j w_j p_j`, clipped. Zero-weight entries are not evaluated.
    pub fn predict(&self, data: &CohortDataset, rows: &[usize]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; rows.len()];
        for e in self.entries.iter().filter(|e| e.weight > 0.0) {
            let p = e.model.predict(data, rows)?;
            for (o, pi) in out.iter_mut().zip(p) {
                *o += e.weight * pi;
            }
        }
        Ok(out.into_iter().map(clip_prob).collect())
    }

    /// Total weight held by hdPS algorithm entries.
    pub fn hdps_weight(&self) -> f64 {
        self.entries.iter().filter(|e| e.is_hdps).map(|e| e.weight).sum()
    }
}

fn tune_library(library: &SlLibrary, data: &CohortDataset, split: &SplitPlan, seed: u64) -> Vec<Result<TunedLearner>> {
    library
        .entries
        .par_iter()
        .map(|l| tune_lgo(l, split, data, seed))
        .collect()
}

fn check_split(data: &CohortDataset, split: &SplitPlan) -> Result<()> {
    if split.n != data.n_patients() {
        return Err(Error::invalid(format!(
            "split plan is for {} patients, cohort has {}",
            split.n,
            data.n_patients()
        )));
    }
    for (what, rows) in [
        ("LGO training", &split.lgo_train_idx),
        ("LGO validation", &split.lgo_val_idx),
    ] {
        let y = data.treatment_at(rows);
        let pos = y.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::invalid(format!("{what} rows contain a single treatment class")));
        }
    }
    Ok(())
}

fn assemble(
    library: &SlLibrary,
    data: &CohortDataset,
    split: &SplitPlan,
    seed: u64,
    discrete: bool,
) -> Result<SlModel> {
    check_split(data, split)?;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (learner, res) in library.entries.iter().zip(tune_library(library, data, split, seed)) {
        match res {
            Ok(t) => kept.push((learner, t)),
            Err(e) => {
                log::warn!("dropping library entry {}: {e}", learner.name);
                dropped.push((learner.name.clone(), e.to_string()));
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::Fit {
            learner: library.preset.to_string(),
            msg: "every library entry failed".into(),
        });
    }
    let y_val = data.treatment_at(&split.lgo_val_idx);
    let mut z = Array2::<f64>::zeros((y_val.len(), kept.len()));
    for (j, (_, t)) in kept.iter().enumerate() {
        z.column_mut(j).iter_mut().zip(&t.val_pred).for_each(|(d, s)| *d = *s);
    }
    let weights = if discrete {
        let best = kept
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (j, (_, t))| if t.val_nll < acc.1 { (j, t.val_nll) } else { acc },
            )
            .0;
        let mut w = vec![0.0; kept.len()];
        w[best] = 1.0;
        let achieved_val_nll = nll(&z.column(best).to_vec(), &y_val)?;
        EnsembleWeights {
            weights: w,
            achieved_val_nll,
        }
    } else {
        solve_simplex_nll(z.view(), &y_val)?
    };
    let entries = kept
        .into_iter()
        .zip(&weights.weights)
        .map(|((learner, t), &weight)| SlEntry {
            name: t.name,
            is_hdps: learner.view.is_hdps_algorithm(),
            chosen_index: t.chosen_index,
            chosen: t.chosen,
            val_nll: t.val_nll,
            weight,
            model: t.model,
        })
        .collect();
    Ok(SlModel {
        preset: library.preset,
        discrete,
        entries,
        achieved_val_nll: weights.achieved_val_nll,
        dropped,
        split: split.clone(),
    })
}

/// Tunes every entry on the LGO training rows, fits convex weights on the LGO
/// validation predictions and refits every entry on the full training rows.
pub fn fit_sample_split_sl(library: &SlLibrary, data: &CohortDataset, split: &SplitPlan, seed: u64) -> Result<SlModel> {
    assemble(library, data, split, seed, false)
}

/// Same as [`fit_sample_split_sl`] with all weight on the entry of lowest validation
/// NLL (first in library order on ties).
pub fn discrete_sl(library: &SlLibrary, data: &CohortDataset, split: &SplitPlan, seed: u64) -> Result<SlModel> {
    assemble(library, data, split, seed, true)
}

/// Nonzero weights, largest first, ties by name.
pub fn weight_report(model: &SlModel) -> Vec<(String, f64)> {
    let mut rows: Vec<(String, f64)> = model
        .entries
        .iter()
        .filter(|e| e.weight > 0.0)
        .map(|e| (e.name.clone(), e.weight))
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows
}
