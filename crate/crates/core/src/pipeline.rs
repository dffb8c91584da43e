//! End-to-end workflows: run configuration, method specs, benchmark tables, overfitting
//! sweeps and versioned model files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{load_cohort, make_split, CohortDataset, SplitPlan, DEFAULT_LGO_FRAC, DEFAULT_TEST_FRAC};
use crate::error::{Error, Result};
use crate::hdps::HdpsConfig;
use crate::learners::{
    cart_grid, derive_seed, fit_on_rows, gbm_grid_with, hdps_learner, lasso_grid, lasso_hdps_learner, tune_lgo,
    CohortModel, FeatureView, HyperParams, Learner, GBM_MIN_LEAF, GBM_SUBSAMPLE, LASSO_PATH_LEN, LASSO_PATH_MIN_RATIO,
};
use crate::metrics::{auc, nll, timed_fit, write_reports_csv, EvalReport};
use crate::superlearner::{discrete_sl, fit_sample_split_sl, weight_report, SlLibrary, SlModel, SlPreset, SL3_HDPS};
use crate::synth::{generate, SynthConfig};

pub const BASE_LEARNERS: [&str; 6] = ["glm", "lasso", "gbm", "cart", "lda", "baseline_rate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub baseline: PathBuf,
    pub claims: PathBuf,
}

/// Tuning grids of the built-in learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerGrids {
    /// Base learners used as single methods and inside the Super Learner presets.
    pub include: Vec<String>,
    pub lasso_path_len: usize,
    pub lasso_min_ratio: f64,
    pub gbm_trees: Vec<usize>,
    pub gbm_depths: Vec<usize>,
    pub gbm_shrinkage: Vec<f64>,
    pub gbm_subsample: f64,
    pub gbm_min_leaf: usize,
    pub cart_depths: Vec<usize>,
    pub cart_min_leaf: usize,
}

impl Default for LearnerGrids {
    fn default() -> Self {
        Self {
            include: BASE_LEARNERS.iter().map(|s| s.to_string()).collect(),
            lasso_path_len: LASSO_PATH_LEN,
            lasso_min_ratio: LASSO_PATH_MIN_RATIO,
            gbm_trees: vec![100, 300],
            gbm_depths: vec![2, 3],
            gbm_shrinkage: vec![0.05, 0.1],
            gbm_subsample: GBM_SUBSAMPLE,
            gbm_min_leaf: GBM_MIN_LEAF,
            cart_depths: vec![3, 5, 8],
            cart_min_leaf: 20,
        }
    }
}

impl LearnerGrids {
    pub fn lasso(&self) -> Vec<HyperParams> {
        lasso_grid(self.lasso_path_len, self.lasso_min_ratio)
    }

    pub fn learner(&self, name: &str) -> Result<Learner> {
        let grid = match name {
            "glm" => vec![HyperParams::Glm],
            "lasso" => self.lasso(),
            "gbm" => gbm_grid_with(
                &self.gbm_trees,
                &self.gbm_depths,
                &self.gbm_shrinkage,
                self.gbm_subsample,
                self.gbm_min_leaf,
            ),
            "cart" => cart_grid(&self.cart_depths, self.cart_min_leaf),
            "lda" => vec![HyperParams::Lda],
            "baseline_rate" => vec![HyperParams::BaselineRate],
            other => return Err(Error::Config(format!("unknown learner {other:?}"))),
        };
        Learner::new(name, grid, FeatureView::Baseline)
    }

    pub fn library(&self) -> Result<Vec<Learner>> {
        self.include.iter().map(|n| self.learner(n)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Values of n/k.
    pub ratios: Vec<f64>,
    pub k: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.2, 0.4],
            k: vec![10, 25, 50, 100, 200, 350, 500],
        }
    }
}

/// The hdPS grid of the benchmark tables: n = 200 up to k = 500, then n = 500.
pub fn default_hdps_grid() -> Vec<HdpsConfig> {
    [
        (200, 50),
        (200, 100),
        (200, 200),
        (200, 350),
        (200, 500),
        (500, 750),
        (500, 1000),
    ]
    .into_iter()
    .map(|(n, k)| HdpsConfig::new(n, k))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub test_frac: f64,
    pub lgo_frac: f64,
    /// Methods to run; all singles, hdPS grid points and SL presets when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
    pub hdps_grid: Vec<HdpsConfig>,
    pub sl3_hdps: HdpsConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub learners: LearnerGrids,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            test_frac: DEFAULT_TEST_FRAC,
            lgo_frac: DEFAULT_LGO_FRAC,
            methods: None,
            hdps_grid: default_hdps_grid(),
            sl3_hdps: SL3_HDPS,
            out_dir: None,
            data: None,
            synth: None,
            learners: LearnerGrids::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for h in self.hdps_grid.iter().chain([&self.sl3_hdps]) {
            h.validate()?;
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        if self.data.is_some() && self.synth.is_some() {
            return Err(Error::Config("give either [data] or [synth], not both".into()));
        }
        self.learners.library()?;
        if let Some(ms) = &self.methods {
            for m in ms {
                m.parse::<Method>()?;
            }
        }
        if self.sweep.ratios.iter().any(|r| !(*r > 0.0)) || self.sweep.k.contains(&0) {
            return Err(Error::Config("sweep ratios and k values must be positive".into()));
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<CohortDataset> {
        match (&self.data, &self.synth) {
            (Some(d), None) => load_cohort(&d.baseline, &d.claims),
            (None, Some(s)) => Ok(generate(s)?.data),
            _ => Err(Error::Config("no cohort: give [data] paths or a [synth] table".into())),
        }
    }

    pub fn split(&self, data: &CohortDataset) -> Result<SplitPlan> {
        make_split(data.n_patients(), self.seed, self.test_frac, self.lgo_frac)
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        match &self.methods {
            Some(ms) => ms.iter().map(|m| m.parse()).collect(),
            None => {
                let mut out: Vec<Method> = self.learners.include.iter().map(|n| n.parse()).collect::<Result<_>>()?;
                out.extend(self.hdps_grid.iter().copied().map(Method::Hdps));
                out.extend([SlPreset::Sl1, SlPreset::Sl2, SlPreset::Sl3].map(Method::Sl));
                Ok(out)
            }
        }
    }

    pub fn library(&self, preset: SlPreset) -> Result<SlLibrary> {
        let base = self.learners.library()?;
        match preset {
            SlPreset::Sl1 => SlLibrary::sl1(&base),
            SlPreset::Sl2 => SlLibrary::sl2(&base, &self.hdps_grid),
            SlPreset::Sl3 => SlLibrary::sl3(&base, self.sl3_hdps),
            SlPreset::Custom => Err(Error::Config("custom libraries are built in code".into())),
        }
    }
}

/// A benchmarkable method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// A base learner on baseline covariates, by name.
    Learner(&'static str),
    Hdps(HdpsConfig),
    HdpsLasso(HdpsConfig),
    Sl(SlPreset),
    DiscreteSl(SlPreset),
}

fn parse_hdps_args(s: &str) -> Option<HdpsConfig> {
    let (mut n, mut k) = (None, None);
    for part in s.split(',') {
        let (key, val) = part.trim().split_once('=')?;
        let v: usize = val.trim().parse().ok()?;
        match key.trim() {
            "n" => n = Some(v),
            "k" => k = Some(v),
            _ => return None,
        }
    }
    Some(HdpsConfig::new(n?, k?))
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown method {s:?}"));
        let lower = s.trim().to_ascii_lowercase();
        let preset = |p: &str| match p {
            "sl1" => Some(SlPreset::Sl1),
            "sl2" => Some(SlPreset::Sl2),
            "sl3" => Some(SlPreset::Sl3),
            _ => None,
        };
        if let Some(p) = preset(&lower) {
            return Ok(Method::Sl(p));
        }
        if let Some(p) = lower.strip_prefix('d').and_then(preset) {
            return Ok(Method::DiscreteSl(p));
        }
        if let Some(b) = BASE_LEARNERS.iter().find(|b| **b == lower) {
            return Ok(Method::Learner(b));
        }
        for (prefix, lasso) in [("hdps_lasso", true), ("hdps", false)] {
            if let Some(rest) = lower.strip_prefix(prefix) {
                let args = rest
                    .strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| rest.strip_prefix(':'))
                    .ok_or_else(bad)?;
                let cfg = parse_hdps_args(args).ok_or_else(bad)?;
                cfg.validate()?;
                return Ok(if lasso {
                    Method::HdpsLasso(cfg)
                } else {
                    Method::Hdps(cfg)
                });
            }
        }
        Err(bad())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Learner(n) => f.write_str(n),
            Method::Hdps(c) => write!(f, "hdps(k={},n={})", c.k_total, c.n_per_dim),
            Method::HdpsLasso(c) => write!(f, "hdps_lasso(k={},n={})", c.k_total, c.n_per_dim),
            Method::Sl(p) => write!(f, "{p}"),
            Method::DiscreteSl(p) => write!(f, "d{p}"),
        }
    }
}

pub const MODEL_FORMAT: &str = "propsl-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKind {
    Single(CohortModel),
    Ensemble(SlModel),
}

/// A fitted method as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format: String,
    pub version: u32,
    pub method: String,
    /// Wall-clock fit time including tuning.
    pub seconds: f64,
    /// Validation NLL on the LGO split (the ensemble's achieved NLL for Super Learners).
    pub lgo_val_nll: f64,
    pub split: SplitPlan,
    pub model: ModelKind,
}

impl SavedModel {
    pub fn predict(&self, data: &CohortDataset, rows: &[usize]) -> Result<Vec<f64>> {
        match &self.model {
            ModelKind::Single(m) => m.predict(data, rows),
            ModelKind::Ensemble(m) => m.predict(data, rows),
        }
    }

    /// Train/test report on the split the model was fitted with.
    pub fn evaluate(&self, data: &CohortDataset) -> Result<EvalReport> {
        if data.n_patients() != self.split.n {
            return Err(Error::invalid(format!(
                "model was fitted on a {}-patient split, cohort has {} patients",
                self.split.n,
                data.n_patients()
            )));
        }
        let p_train = self.predict(data, &self.split.train_idx)?;
        let p_test = self.predict(data, &self.split.test_idx)?;
        EvalReport::from_predictions(
            self.method.clone(),
            (&p_train, &data.treatment_at(&self.split.train_idx)),
            (&p_test, &data.treatment_at(&self.split.test_idx)),
            self.seconds,
        )
    }

    /// `(nll, auc)` over every patient of `data`.
    pub fn score_all(&self, data: &CohortDataset) -> Result<(f64, f64)> {
        let rows: Vec<usize> = (0..data.n_patients()).collect();
        let p = self.predict(data, &rows)?;
        Ok((nll(&p, data.treatment())?, auc(&p, data.treatment())?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let format = v.get("format").and_then(|f| f.as_str());
        let version = v.get("version").and_then(|f| f.as_u64());
        if format != Some(MODEL_FORMAT) {
            return Err(Error::Schema(format!("not a {MODEL_FORMAT} document")));
        }
        if version != Some(u64::from(MODEL_VERSION)) {
            return Err(Error::Schema(format!(
                "unsupported model version {version:?}, expected {MODEL_VERSION}"
            )));
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn as_ensemble(&self) -> Option<&SlModel> {
        match &self.model {
            ModelKind::Ensemble(m) => Some(m),
            ModelKind::Single(_) => None,
        }
    }
}

/// Fits one method on the training rows of `split`, tuning on its LGO rows.
pub fn train_method(method: Method, config: &RunConfig, data: &CohortDataset, split: &SplitPlan) -> Result<SavedModel> {
    let seed = config.seed;
    let tuned_single = |learner: Learner| -> Result<(ModelKind, f64)> {
        let t = tune_lgo(&learner, split, data, seed)?;
        Ok((ModelKind::Single(t.model), t.val_nll))
    };
    let ((model, lgo_val_nll), seconds) = timed_fit(|| match method {
        Method::Learner(name) => tuned_single(config.learners.learner(name)?),
        Method::Hdps(cfg) => tuned_single(hdps_learner(cfg)?),
        Method::HdpsLasso(cfg) => tuned_single(lasso_hdps_learner(cfg)?.with_grid(config.learners.lasso())?),
        Method::Sl(p) | Method::DiscreteSl(p) => {
            let lib = config.library(p)?;
            let m = if matches!(method, Method::Sl(_)) {
                fit_sample_split_sl(&lib, data, split, seed)?
            } else {
                discrete_sl(&lib, data, split, seed)?
            };
            let v = m.achieved_val_nll;
            Ok((ModelKind::Ensemble(m), v))
        }
    })?;
    Ok(SavedModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        method: method.to_string(),
        seconds,
        lgo_val_nll,
        split: split.clone(),
        model,
    })
}

/// Runs `f` on a dedicated pool of `jobs` worker threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    thread_pool(jobs)?.install(f)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgoDiagnostic {
    pub method: String,
    pub lgo_val_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub preset: String,
    pub learner: String,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub reports: Vec<EvalReport>,
    pub diagnostics: Vec<LgoDiagnostic>,
    pub failures: Vec<MethodFailure>,
    pub weights: Vec<WeightRow>,
    pub models: Vec<SavedModel>,
}

impl BenchmarkOutput {
    pub fn report(&self, method: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == method)
    }

    pub fn model(&self, method: &str) -> Option<&SavedModel> {
        self.models.iter().find(|m| m.method == method)
    }
}

/// Runs every configured method on one cohort. Method failures are collected and the
/// remaining methods still run. Output order follows the method list regardless of
/// `jobs`.
pub fn benchmark(config: &RunConfig, data: &CohortDataset, jobs: usize) -> Result<BenchmarkOutput> {
    let split = config.split(data)?;
    let methods = config.methods()?;
    let results: Vec<(Method, Result<(SavedModel, EvalReport)>)> = thread_pool(jobs)?.install(|| {
        methods
            .par_iter()
            .map(|&m| {
                let r = train_method(m, config, data, &split).and_then(|saved| {
                    let rep = saved.evaluate(data)?;
                    Ok((saved, rep))
                });
                (m, r)
            })
            .collect()
    });
    let mut out = BenchmarkOutput {
        reports: Vec::new(),
        diagnostics: Vec::new(),
        failures: Vec::new(),
        weights: Vec::new(),
        models: Vec::new(),
    };
    for (m, r) in results {
        match r {
            Ok((saved, rep)) => {
                out.diagnostics.push(LgoDiagnostic {
                    method: saved.method.clone(),
                    lgo_val_nll: saved.lgo_val_nll,
                });
                if let Some(sl) = saved.as_ensemble() {
                    for (learner, weight) in weight_report(sl) {
                        out.weights.push(WeightRow {
                            preset: saved.method.clone(),
                            learner,
                            weight,
                        });
                    }
                }
                out.reports.push(rep);
                out.models.push(saved);
            }
            Err(e) => {
                log::error!("{m} failed: {e}");
                out.failures.push(MethodFailure {
                    method: m.to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the benchmark tables and model files into `dir`; returns the files written.
pub fn write_benchmark(dir: &Path, out: &BenchmarkOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("models")).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let report = dir.join("report.csv");
    let f = fs::File::create(&report).map_err(|e| Error::io(&report, e))?;
    write_reports_csv(&out.reports, f)?;
    files.push(report);
    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(&out.reports)?).map_err(|e| Error::io(&json, e))?;
    files.push(json);
    let diag = dir.join("lgo_diagnostics.csv");
    write_csv(&diag, &out.diagnostics, &["method", "lgo_val_nll"])?;
    files.push(diag);
    let fail = dir.join("failures.csv");
    write_csv(&fail, &out.failures, &["method", "error"])?;
    files.push(fail);
    let weights = dir.join("weights.csv");
    write_csv(&weights, &out.weights, &["preset", "learner", "weight"])?;
    files.push(weights);
    for m in &out.models {
        let p = dir.join("models").join(format!("{}.json", file_stem(&m.method)));
        m.save(&p)?;
        files.push(p);
    }
    Ok(files)
}

/// File-name-safe form of a method name.
pub fn file_stem(method: &str) -> String {
    method
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub n_per_dim: usize,
    pub k: usize,
    pub auc_train: f64,
    pub auc_test: f64,
    pub nll_train: f64,
    pub nll_test: f64,
}

/// hdPS train/test performance over the k schedule at each fixed ratio n/k. Each point
/// selects covariates and fits the logistic model on the training rows.
pub fn overfit_sweep(config: &RunConfig, data: &CohortDataset, jobs: usize) -> Result<Vec<SweepRow>> {
    let split = config.split(data)?;
    let points: Vec<(f64, HdpsConfig)> = config
        .sweep
        .ratios
        .iter()
        .flat_map(|&r| {
            config
                .sweep
                .k
                .iter()
                .map(move |&k| (r, HdpsConfig::new(((r * k as f64).round() as usize).max(1), k)))
        })
        .collect();
    let y_train = data.treatment_at(&split.train_idx);
    let y_test = data.treatment_at(&split.test_idx);
    thread_pool(jobs)?.install(|| {
        points
            .par_iter()
            .map(|&(ratio, cfg)| {
                let learner = hdps_learner(cfg)?;
                let seed = derive_seed(config.seed, &learner.name);
                let m = fit_on_rows(&learner, 0, data, &split.train_idx, seed)?;
                let p_train = m.predict(data, &split.train_idx)?;
                let p_test = m.predict(data, &split.test_idx)?;
                Ok(SweepRow {
                    ratio,
                    n_per_dim: cfg.n_per_dim,
                    k: cfg.k_total,
                    auc_train: auc(&p_train, &y_train)?,
                    auc_test: auc(&p_test, &y_test)?,
                    nll_train: nll(&p_train, &y_train)?,
                    nll_test: nll(&p_test, &y_test)?,
                })
            })
            .collect()
    })
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(
        path,
        rows,
        &[
            "ratio",
            "n_per_dim",
            "k",
            "auc_train",
            "auc_test",
            "nll_train",
            "nll_test",
        ],
    )
}

pub fn write_weights_csv<W: std::io::Write>(model: &SlModel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["learner", "weight"])?;
    for (name, weight) in weight_report(model) {
        w.write_record([name, weight.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<weights>", e))
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub jobs: usize,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, jobs: usize, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            jobs,
            args: std::env::args().collect(),
            config: serde_json::to_value(config)?,
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for s in [
            "glm",
            "baseline_rate",
            "hdps(k=500,n=200)",
            "hdps_lasso(k=50,n=10)",
            "SL1",
            "dSL3",
        ] {
            let m: Method = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert_eq!(
            "hdps:n=200,k=500".parse::<Method>().unwrap().to_string(),
            "hdps(k=500,n=200)"
        );
        assert_eq!("sl2".parse::<Method>().unwrap(), Method::Sl(SlPreset::Sl2));
        for bad in ["svm", "hdps(k=5)", "hdps(k=0,n=1)", "sl4"] {
            assert!(bad.parse::<Method>().is_err(), "{bad}");
        }
    }

    #[test]
    fn hdps_method_matches_learner_name() {
        let cfg = HdpsConfig::new(200, 500);
        assert_eq!(Method::Hdps(cfg).to_string(), hdps_learner(cfg).unwrap().name);
        assert_eq!(
            Method::HdpsLasso(cfg).to_string(),
            lasso_hdps_learner(cfg).unwrap().name
        );
    }

    #[test]
    fn default_methods_cover_table() {
        let m = RunConfig::default().methods().unwrap();
        assert_eq!(m.len(), 6 + 7 + 3);
        let labels: Vec<String> = default_hdps_grid().iter().map(|h| h.label()).collect();
        assert_eq!(labels.first().unwrap(), "k=50, n=200");
        assert_eq!(labels.last().unwrap(), "k=1000, n=500");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig {
            methods: Some(vec!["glm".into(), "SL1".into()]),
            synth: Some(SynthConfig::default()),
            ..RunConfig::default()
        };
        let s = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&s).unwrap(), cfg);
        assert!(RunConfig::from_toml_str("seed = 1\nunknown = 2\n").is_err());
        assert!(RunConfig::from_toml_str("methods = [\"svm\"]\n").is_err());
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("hdps(k=500,n=200)"), "hdps_k_500_n_200");
        assert_eq!(file_stem("SL1"), "SL1");
    }
}
