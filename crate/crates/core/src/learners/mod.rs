//! Base learners behind one train/predict contract, their feature views, and
//! leave-group-out hyperparameter tuning.

pub mod discriminant;
pub mod linalg;
pub mod logistic;
pub mod tree;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use ndarray::{concatenate, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cohort::{fit_standardizer, CohortDataset, SplitPlan, StandardizationParams};
use crate::error::{Error, Result};
use crate::hdps::{HdpsConfig, HdpsSelection};
use crate::metrics::{clip_prob, nll};
use logistic::{sigmoid, LassoProblem};
use tree::{BoostParams, Boosted, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    Absolute(f64),
    /// Fraction of the smallest penalty that zeroes every slope on the fitting data.
    Relative(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum HyperParams {
    BaselineRate,
    Glm,
    Lasso {
        penalty: Penalty,
    },
    Gbm {
        trees: usize,
        depth: usize,
        shrinkage: f64,
        subsample: f64,
        min_leaf: usize,
    },
    Cart {
        max_depth: usize,
        min_leaf: usize,
    },
    Lda,
}

impl HyperParams {
    pub fn label(&self) -> String {
        match self {
            HyperParams::BaselineRate => "baseline_rate".into(),
            HyperParams::Glm => "glm".into(),
            HyperParams::Lasso {
                penalty: Penalty::Absolute(l),
            } => format!("lasso(lambda={l})"),
            HyperParams::Lasso {
                penalty: Penalty::Relative(r),
            } => format!("lasso(lambda={r}*max)"),
            HyperParams::Gbm {
                trees,
                depth,
                shrinkage,
                subsample,
                min_leaf,
            } => format!(
                "gbm(trees={trees},depth={depth},shrinkage={shrinkage},subsample={subsample},min_leaf={min_leaf})"
            ),
            HyperParams::Cart { max_depth, min_leaf } => format!("cart(max_depth={max_depth},min_leaf={min_leaf})"),
            HyperParams::Lda => "lda".into(),
        }
    }
}

/// Number of points on the default lasso penalty path.
pub const LASSO_PATH_LEN: usize = 20;
/// Smallest penalty on the default path, relative to the all-zero penalty.
pub const LASSO_PATH_MIN_RATIO: f64 = 1e-3;

/// Geometric path of `len` relative penalties from 1 down to `min_ratio`.
pub fn lasso_grid(len: usize, min_ratio: f64) -> Vec<HyperParams> {
    (0..len)
        .map(|i| {
            let t = if len > 1 { i as f64 / (len - 1) as f64 } else { 0.0 };
            HyperParams::Lasso {
                penalty: Penalty::Relative(min_ratio.powf(t)),
            }
        })
        .collect()
}

pub fn default_lasso_grid() -> Vec<HyperParams> {
    lasso_grid(LASSO_PATH_LEN, LASSO_PATH_MIN_RATIO)
}

pub const GBM_SUBSAMPLE: f64 = 0.5;
pub const GBM_MIN_LEAF: usize = 10;

pub fn gbm_grid(trees: &[usize], depths: &[usize], shrinkages: &[f64]) -> Vec<HyperParams> {
    gbm_grid_with(trees, depths, shrinkages, GBM_SUBSAMPLE, GBM_MIN_LEAF)
}

pub fn gbm_grid_with(
    trees: &[usize],
    depths: &[usize],
    shrinkages: &[f64],
    subsample: f64,
    min_leaf: usize,
) -> Vec<HyperParams> {
    let mut out = Vec::new();
    for &trees in trees {
        for &depth in depths {
            for &shrinkage in shrinkages {
                out.push(HyperParams::Gbm {
                    trees,
                    depth,
                    shrinkage,
                    subsample,
                    min_leaf,
                });
            }
        }
    }
    out
}

pub fn default_gbm_grid() -> Vec<HyperParams> {
    gbm_grid(&[100, 300], &[2, 3], &[0.05, 0.1])
}

pub fn cart_grid(depths: &[usize], min_leaf: usize) -> Vec<HyperParams> {
    depths
        .iter()
        .map(|&max_depth| HyperParams::Cart { max_depth, min_leaf })
        .collect()
}

pub fn default_cart_grid() -> Vec<HyperParams> {
    cart_grid(&[3, 5, 8], 20)
}

/// Learned parameters of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Constant {
        p: f64,
    },
    /// Logistic in a linear predictor (glm, lasso and lda all reduce to this).
    Linear {
        intercept: f64,
        coef: Vec<f64>,
    },
    Tree {
        tree: Tree,
    },
    Boosted {
        model: Boosted,
    },
}

/// A model fitted on a numeric design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub learner: String,
    pub hyper: HyperParams,
    pub params: ModelParams,
    pub n_features: usize,
}

impl FittedModel {
    /// Class-1 probabilities clipped to `[1e-15, 1 - 1e-15]`.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::ColumnMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let raw: Vec<f64> = match &self.params {
            ModelParams::Constant { p } => vec![*p; x.nrows()],
            ModelParams::Linear { intercept, coef } => x
                .rows()
                .into_iter()
                .map(|r| sigmoid(intercept + r.dot(&ArrayView1::from(coef.as_slice()))))
                .collect(),
            ModelParams::Tree { tree } => x.rows().into_iter().map(|r| tree.predict_row(r)).collect(),
            ModelParams::Boosted { model } => x.rows().into_iter().map(|r| sigmoid(model.decision(r))).collect(),
        };
        Ok(raw.into_iter().map(clip_prob).collect())
    }
}

/// Thread-safe tally of fits per grid index.
#[derive(Debug, Default)]
pub struct FitCounter {
    counts: Mutex<BTreeMap<usize, usize>>,
}

impl FitCounter {
    fn record(&self, grid_index: usize) {
        *self
            .counts
            .lock()
            .expect("fit counter poisoned")
            .entry(grid_index)
            .or_default() += 1;
    }

    pub fn get(&self, grid_index: usize) -> usize {
        self.counts
            .lock()
            .expect("fit counter poisoned")
            .get(&grid_index)
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.lock().expect("fit counter poisoned").values().sum()
    }

    pub fn reset(&self) {
        self.counts.lock().expect("fit counter poisoned").clear();
    }
}

/// Which covariates a learner sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "view", rename_all = "snake_case")]
pub enum FeatureView {
    /// Standardized baseline covariates only.
    Baseline,
    /// Baseline plus hdPS-selected claims covariates, for a generic base learner.
    BaselineHdps { hdps: HdpsConfig },
    /// The hdPS algorithm itself (selection followed by a logistic-family fit).
    HdpsInternal { hdps: HdpsConfig },
}

impl FeatureView {
    pub fn hdps(&self) -> Option<&HdpsConfig> {
        match self {
            FeatureView::Baseline => None,
            FeatureView::BaselineHdps { hdps } | FeatureView::HdpsInternal { hdps } => Some(hdps),
        }
    }

    pub fn is_hdps_algorithm(&self) -> bool {
        matches!(self, FeatureView::HdpsInternal { .. })
    }
}

/// A named algorithm with its tuning grid and feature view. Clones share one fit counter.
#[derive(Debug, Clone)]
pub struct Learner {
    pub name: String,
    pub grid: Vec<HyperParams>,
    pub view: FeatureView,
    counter: Arc<FitCounter>,
}

impl Learner {
    pub fn new(name: impl Into<String>, grid: Vec<HyperParams>, view: FeatureView) -> Result<Self> {
        let name = name.into();
        if grid.is_empty() {
            return Err(Error::Config(format!("learner {name} has an empty grid")));
        }
        if let Some(fam) = grid.first().map(std::mem::discriminant) {
            if grid.iter().any(|h| std::mem::discriminant(h) != fam) {
                return Err(Error::Config(format!("learner {name} mixes algorithms in its grid")));
            }
        }
        if matches!(view, FeatureView::HdpsInternal { .. })
            && !matches!(grid[0], HyperParams::Glm | HyperParams::Lasso { .. })
        {
            return Err(Error::Config(format!(
                "learner {name}: the hdPS algorithm uses a logistic-family fit"
            )));
        }
        if let Some(h) = view.hdps() {
            h.validate()?;
        }
        Ok(Self {
            name,
            grid,
            view,
            counter: Arc::new(FitCounter::default()),
        })
    }

    fn builtin(name: &str, grid: Vec<HyperParams>) -> Self {
        Self::new(name, grid, FeatureView::Baseline).expect("built-in learner is valid")
    }

    pub fn glm() -> Self {
        Self::builtin("glm", vec![HyperParams::Glm])
    }

    pub fn lasso() -> Self {
        Self::builtin("lasso", default_lasso_grid())
    }

    pub fn gbm() -> Self {
        Self::builtin("gbm", default_gbm_grid())
    }

    pub fn cart() -> Self {
        Self::builtin("cart", default_cart_grid())
    }

    pub fn lda() -> Self {
        Self::builtin("lda", vec![HyperParams::Lda])
    }

    pub fn baseline_rate() -> Self {
        Self::builtin("baseline_rate", vec![HyperParams::BaselineRate])
    }

    /// The six built-in learners on baseline covariates.
    pub fn base_library() -> Vec<Self> {
        vec![
            Self::glm(),
            Self::lasso(),
            Self::gbm(),
            Self::cart(),
            Self::lda(),
            Self::baseline_rate(),
        ]
    }

    /// Same algorithm and grid under another view and name, with a fresh counter.
    pub fn with_view(&self, name: impl Into<String>, view: FeatureView) -> Result<Self> {
        Self::new(name, self.grid.clone(), view)
    }

    pub fn with_grid(&self, grid: Vec<HyperParams>) -> Result<Self> {
        Self::new(self.name.clone(), grid, self.view)
    }

    pub fn counter(&self) -> &FitCounter {
        &self.counter
    }
}

/// The hdPS prediction algorithm: covariate selection on the fitting rows, combined with
/// baseline covariates, followed by unpenalized logistic regression.
pub fn hdps_learner(config: HdpsConfig) -> Result<Learner> {
    Learner::new(
        format!("hdps(k={},n={})", config.k_total, config.n_per_dim),
        vec![HyperParams::Glm],
        FeatureView::HdpsInternal { hdps: config },
    )
}

/// hdPS with an L1-penalized logistic step whose penalty is chosen on the LGO split.
pub fn lasso_hdps_learner(config: HdpsConfig) -> Result<Learner> {
    Learner::new(
        format!("hdps_lasso(k={},n={})", config.k_total, config.n_per_dim),
        default_lasso_grid(),
        FeatureView::HdpsInternal { hdps: config },
    )
}

fn check_training(x: ArrayView2<'_, f64>, y: &[u8]) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::invalid("need at least two training rows"));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::invalid("labels must be 0/1"));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass(y.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    Ok(y.iter().map(|&v| f64::from(v)).collect())
}

fn fit_params(hyper: &HyperParams, x: ArrayView2<'_, f64>, y: &[f64], seed: u64) -> Result<ModelParams> {
    let linear = |(intercept, coef): (f64, ndarray::Array1<f64>)| ModelParams::Linear {
        intercept,
        coef: coef.to_vec(),
    };
    Ok(match *hyper {
        HyperParams::BaselineRate => ModelParams::Constant {
            p: y.iter().sum::<f64>() / y.len() as f64,
        },
        HyperParams::Glm => linear(logistic::fit_glm(x, y)?),
        HyperParams::Lasso { penalty } => {
            let prob = LassoProblem::new(x, y);
            let lambda = match penalty {
                Penalty::Absolute(l) => l,
                Penalty::Relative(r) => r * prob.lambda_max(),
            };
            linear(prob.solve(lambda, prob.start())?)
        }
        HyperParams::Gbm {
            trees,
            depth,
            shrinkage,
            subsample,
            min_leaf,
        } => {
            let params = BoostParams {
                trees,
                depth,
                shrinkage,
                subsample,
                min_leaf,
            };
            ModelParams::Boosted {
                model: tree::fit_gbm(x, y, params, seed).0,
            }
        }
        HyperParams::Cart { max_depth, min_leaf } => ModelParams::Tree {
            tree: tree::fit_cart(x, y, max_depth, min_leaf),
        },
        HyperParams::Lda => linear(discriminant::fit_lda(x, y)?),
    })
}

fn validate_hyper(h: &HyperParams) -> Result<()> {
    let ok = match *h {
        HyperParams::Lasso {
            penalty: Penalty::Absolute(v) | Penalty::Relative(v),
        } => v >= 0.0 && v.is_finite(),
        HyperParams::Gbm {
            depth,
            shrinkage,
            subsample,
            min_leaf,
            ..
        } => depth >= 1 && shrinkage > 0.0 && subsample > 0.0 && subsample <= 1.0 && min_leaf >= 1,
        HyperParams::Cart { min_leaf, .. } => min_leaf >= 1,
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("invalid hyperparameters {}", h.label())))
    }
}

/// Fits grid point `grid_index` of `learner` on `(x, y)`.
pub fn fit(learner: &Learner, grid_index: usize, x: ArrayView2<'_, f64>, y: &[u8], seed: u64) -> Result<FittedModel> {
    let hyper = learner
        .grid
        .get(grid_index)
        .ok_or_else(|| Error::invalid(format!("{} has no grid point {grid_index}", learner.name)))?;
    validate_hyper(hyper)?;
    let yf = check_training(x, y)?;
    let params = fit_params(hyper, x, &yf, seed).map_err(|e| Error::Fit {
        learner: learner.name.clone(),
        msg: e.to_string(),
    })?;
    learner.counter.record(grid_index);
    Ok(FittedModel {
        learner: learner.name.clone(),
        hyper: hyper.clone(),
        params,
        n_features: x.ncols(),
    })
}

/// Fits every grid point on the same data. Lasso penalties are solved along one
/// warm-started path; boosting configurations that differ only in tree count share one
/// fit and are truncated. Results are identical to fitting each point with [`fit`] up
/// to solver tolerance.
pub fn fit_grid(learner: &Learner, x: ArrayView2<'_, f64>, y: &[u8], seed: u64) -> Vec<Result<FittedModel>> {
    let yf = match check_training(x, y) {
        Ok(v) => v,
        Err(e) => return learner.grid.iter().map(|_| Err(clone_err(&e))).collect(),
    };
    let wrap = |i: usize, params: Result<ModelParams>| -> Result<FittedModel> {
        let params = params.map_err(|e| Error::Fit {
            learner: learner.name.clone(),
            msg: e.to_string(),
        })?;
        learner.counter.record(i);
        Ok(FittedModel {
            learner: learner.name.clone(),
            hyper: learner.grid[i].clone(),
            params,
            n_features: x.ncols(),
        })
    };
    let mut out: Vec<Option<Result<FittedModel>>> = (0..learner.grid.len()).map(|_| None).collect();
    for (i, h) in learner.grid.iter().enumerate() {
        if let Err(e) = validate_hyper(h) {
            out[i] = Some(Err(e));
        }
    }
    match learner.grid[0] {
        HyperParams::Lasso { .. } => {
            let prob = LassoProblem::new(x, &yf);
            let lmax = prob.lambda_max();
            let mut order: Vec<(usize, f64)> = learner
                .grid
                .iter()
                .enumerate()
                .filter(|(i, _)| out[*i].is_none())
                .map(|(i, h)| match h {
                    HyperParams::Lasso {
                        penalty: Penalty::Absolute(l),
                    } => (i, *l),
                    HyperParams::Lasso {
                        penalty: Penalty::Relative(r),
                    } => (i, r * lmax),
                    _ => unreachable!("grid families are uniform"),
                })
                .collect();
            order.sort_by(|a, b| b.1.total_cmp(&a.1));
            let mut warm = prob.start();
            for (i, lambda) in order {
                let res = prob.solve(lambda, warm.clone());
                if let Ok(sol) = &res {
                    warm = sol.clone();
                }
                out[i] = Some(wrap(
                    i,
                    res.map(|(intercept, coef)| ModelParams::Linear {
                        intercept,
                        coef: coef.to_vec(),
                    }),
                ));
            }
        }
        HyperParams::Gbm { .. } => {
            let mut groups: BTreeMap<(usize, u64, u64, usize), Vec<(usize, usize)>> = BTreeMap::new();
            for (i, h) in learner.grid.iter().enumerate() {
                if out[i].is_some() {
                    continue;
                }
                if let HyperParams::Gbm {
                    trees,
                    depth,
                    shrinkage,
                    subsample,
                    min_leaf,
                } = *h
                {
                    groups
                        .entry((depth, shrinkage.to_bits(), subsample.to_bits(), min_leaf))
                        .or_default()
                        .push((i, trees));
                }
            }
            for ((depth, shrink, sub, min_leaf), members) in groups {
                let max_trees = members.iter().map(|m| m.1).max().unwrap_or(0);
                let params = BoostParams {
                    trees: max_trees,
                    depth,
                    shrinkage: f64::from_bits(shrink),
                    subsample: f64::from_bits(sub),
                    min_leaf,
                };
                let (full, _) = tree::fit_gbm(x, &yf, params, seed);
                for (i, trees) in members {
                    out[i] = Some(wrap(
                        i,
                        Ok(ModelParams::Boosted {
                            model: full.truncated(trees),
                        }),
                    ));
                }
            }
        }
        _ => {
            for (i, h) in learner.grid.iter().enumerate() {
                if out[i].is_none() {
                    out[i] = Some(wrap(i, fit_params(h, x, &yf, seed)));
                }
            }
        }
    }
    out.into_iter().map(|r| r.expect("every grid point visited")).collect()
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::SingleClass(n) => Error::SingleClass(*n),
        Error::NonFinite(w) => Error::NonFinite(w),
        other => Error::InvalidInput(other.to_string()),
    }
}

/// Fitted feature pipeline: optional hdPS selection plus standardization, both learned
/// on the fitting rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedFeatures {
    pub view: FeatureView,
    pub baseline_names: Vec<String>,
    pub selection: Option<HdpsSelection>,
    pub standardizer: StandardizationParams,
}

impl FittedFeatures {
    pub fn fit(view: FeatureView, data: &CohortDataset, rows: &[usize]) -> Result<Self> {
        let selection = view.hdps().map(|cfg| HdpsSelection::fit(data, cfg, rows)).transpose()?;
        let mut ff = Self {
            view,
            baseline_names: data.baseline_names().to_vec(),
            selection,
            standardizer: StandardizationParams {
                mean: Vec::new(),
                scale: Vec::new(),
            },
        };
        let raw = ff.raw(data, rows)?;
        let all: Vec<usize> = (0..rows.len()).collect();
        ff.standardizer = fit_standardizer(raw.view(), &all)?;
        Ok(ff)
    }

    fn check_schema(&self, data: &CohortDataset) -> Result<()> {
        let got = data.baseline_names();
        for (i, want) in self.baseline_names.iter().enumerate() {
            match got.get(i) {
                Some(g) if g == want => {}
                Some(g) => {
                    return Err(Error::Schema(format!(
                        "baseline column {} is {g:?}, model expects {want:?}",
                        i + 1
                    )))
                }
                None => return Err(Error::Schema(format!("missing baseline column {want:?}"))),
            }
        }
        if let Some(extra) = got.get(self.baseline_names.len()) {
            return Err(Error::Schema(format!("unexpected baseline column {extra:?}")));
        }
        Ok(())
    }

    fn raw(&self, data: &CohortDataset, rows: &[usize]) -> Result<Array2<f64>> {
        self.check_schema(data)?;
        let base = data.baseline().select(Axis(0), rows);
        Ok(match &self.selection {
            Some(sel) if !sel.is_empty() => {
                let h = sel.transform(data, rows);
                concatenate(Axis(1), &[base.view(), h.view()]).expect("row counts agree")
            }
            _ => base,
        })
    }

    pub fn transform(&self, data: &CohortDataset, rows: &[usize]) -> Result<Array2<f64>> {
        self.standardizer.apply(self.raw(data, rows)?.view())
    }

    pub fn n_features(&self) -> usize {
        self.standardizer.n_columns()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = self.baseline_names.clone();
        if let Some(sel) = &self.selection {
            names.extend(sel.feature_names());
        }
        names
    }
}

/// A fitted model together with the feature pipeline it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortModel {
    pub features: FittedFeatures,
    pub model: FittedModel,
}

impl CohortModel {
    pub fn name(&self) -> &str {
        &self.model.learner
    }

    pub fn predict(&self, data: &CohortDataset, rows: &[usize]) -> Result<Vec<f64>> {
        let x = self.features.transform(data, rows)?;
        self.model.predict_proba(x.view())
    }
}

/// Fits grid point `grid_index` of `learner` on `rows` of the cohort, including the
/// feature pipeline.
pub fn fit_on_rows(
    learner: &Learner,
    grid_index: usize,
    data: &CohortDataset,
    rows: &[usize],
    seed: u64,
) -> Result<CohortModel> {
    let features = FittedFeatures::fit(learner.view, data, rows)?;
    let x = features.transform(data, rows)?;
    let model = fit(learner, grid_index, x.view(), &data.treatment_at(rows), seed)?;
    Ok(CohortModel { features, model })
}

/// Outcome of LGO tuning for one learner.
#[derive(Debug, Clone)]
pub struct TunedLearner {
    pub name: String,
    pub chosen_index: usize,
    pub chosen: HyperParams,
    /// Validation NLL per grid point (`None` where the fit failed).
    pub grid_val_nll: Vec<Option<f64>>,
    /// Winning configuration fitted on the LGO training rows.
    pub lgo_model: CohortModel,
    pub val_pred: Vec<f64>,
    pub val_nll: f64,
    /// Winning configuration refitted on the full training rows.
    pub model: CohortModel,
}

/// Deterministic per-learner seed.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the base seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Fits every grid point on the LGO training rows, picks the lowest validation NLL
/// (first in grid order on ties), and refits that configuration on the full training
/// rows. Failing grid points are skipped.
pub fn tune_lgo(learner: &Learner, split: &SplitPlan, data: &CohortDataset, seed: u64) -> Result<TunedLearner> {
    let seed = derive_seed(seed, &learner.name);
    let features = FittedFeatures::fit(learner.view, data, &split.lgo_train_idx)?;
    let x_tr = features.transform(data, &split.lgo_train_idx)?;
    let x_val = features.transform(data, &split.lgo_val_idx)?;
    let y_val = data.treatment_at(&split.lgo_val_idx);
    let fits = fit_grid(learner, x_tr.view(), &data.treatment_at(&split.lgo_train_idx), seed);

    let mut grid_val_nll = Vec::with_capacity(fits.len());
    let mut best: Option<(usize, f64, FittedModel, Vec<f64>)> = None;
    for (i, res) in fits.into_iter().enumerate() {
        let scored = res.and_then(|m| {
            let p = m.predict_proba(x_val.view())?;
            let v = nll(&p, &y_val)?;
            Ok((m, p, v))
        });
        match scored {
            Ok((m, p, v)) => {
                grid_val_nll.push(Some(v));
                if best.as_ref().is_none_or(|b| v < b.1) {
                    best = Some((i, v, m, p));
                }
            }
            Err(e) => {
                log::warn!("{}: grid point {} failed: {e}", learner.name, learner.grid[i].label());
                grid_val_nll.push(None);
            }
        }
    }
    let (chosen_index, val_nll, lgo_fit, val_pred) = best.ok_or_else(|| Error::Fit {
        learner: learner.name.clone(),
        msg: "every grid point failed".into(),
    })?;
    let model = fit_on_rows(learner, chosen_index, data, &split.train_idx, seed)?;
    Ok(TunedLearner {
        name: learner.name.clone(),
        chosen_index,
        chosen: learner.grid[chosen_index].clone(),
        grid_val_nll,
        lgo_model: CohortModel {
            features,
            model: lgo_fit,
        },
        val_pred,
        val_nll,
        model,
    })
}
