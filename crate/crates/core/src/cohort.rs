//! Claims-style cohort data model, file ingestion, splitting and standardization.
//!
//! A cohort holds one row per patient: a binary treatment label (the prediction
//! target), a binary outcome (used only when ranking claims covariates), dense
//! baseline covariates, and any number of sparse claims dimensions holding
//! per-patient code occurrence counts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonzero occurrence counts of one code, sorted by patient row.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodeColumn {
    rows: Vec<u32>,
    counts: Vec<u32>,
}

impl CodeColumn {
    /// Builds a column from `(row, count)` pairs. Rows must be unique and counts positive.
    pub fn from_entries(mut entries: Vec<(u32, u32)>) -> Result<Self> {
        entries.sort_unstable_by_key(|e| e.0);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid(format!("duplicate row {} in code column", w[0].0)));
        }
        if entries.iter().any(|e| e.1 == 0) {
            return Err(Error::invalid("code column counts must be >= 1"));
        }
        let (rows, counts) = entries.into_iter().unzip();
        Ok(Self { rows, counts })
    }

    pub fn from_dense(counts: &[u32]) -> Self {
        let (rows, counts) = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i as u32, c))
            .unzip();
        Self { rows, counts }
    }

    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.rows.iter().zip(&self.counts).map(|(&r, &c)| (r as usize, c))
    }

    pub fn get(&self, row: usize) -> u32 {
        match self.rows.binary_search(&(row as u32)) {
            Ok(i) => self.counts[i],
            Err(_) => 0,
        }
    }

    /// Dense count vector of length `n`.
    pub fn to_dense(&self, n: usize) -> Vec<u32> {
        let mut out = vec![0; n];
        for (r, c) in self.iter() {
            out[r] = c;
        }
        out
    }

    fn max_row(&self) -> Option<u32> {
        self.rows.last().copied()
    }
}

/// One class of claims activity (e.g. inpatient diagnoses).
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimsDimension {
    name: String,
    codes: Vec<String>,
    columns: Vec<CodeColumn>,
    n_rows: usize,
}

impl ClaimsDimension {
    pub fn new(name: impl Into<String>, codes: Vec<String>, columns: Vec<CodeColumn>, n_rows: usize) -> Result<Self> {
        let name = name.into();
        if codes.len() != columns.len() {
            return Err(Error::invalid(format!(
                "dimension {name}: {} codes but {} columns",
                codes.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::with_capacity(codes.len());
        for c in &codes {
            if !seen.insert(c.as_str()) {
                return Err(Error::invalid(format!("dimension {name}: duplicate code {c}")));
            }
        }
        if let Some(bad) = columns
            .iter()
            .filter_map(CodeColumn::max_row)
            .find(|&r| r as usize >= n_rows)
        {
            return Err(Error::invalid(format!(
                "dimension {name}: row {bad} out of range for {n_rows} patients"
            )));
        }
        Ok(Self {
            name,
            codes,
            columns,
            n_rows,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn columns(&self) -> &[CodeColumn] {
        &self.columns
    }

    pub fn column(&self, code_idx: usize) -> &CodeColumn {
        &self.columns[code_idx]
    }

    pub fn code_index(&self, code: &str) -> Option<usize> {
        self.codes.iter().position(|c| c == code)
    }

    pub fn count(&self, row: usize, code: &str) -> u32 {
        self.code_index(code).map_or(0, |i| self.columns[i].get(row))
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_codes(&self) -> usize {
        self.codes.len()
    }
}

/// Patients with labels, dense baseline covariates and sparse claims dimensions.
///
/// Immutable once constructed; all invariants are checked in [`CohortDataset::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDataset {
    patient_ids: Vec<String>,
    treatment: Vec<u8>,
    outcome: Vec<u8>,
    baseline_names: Vec<String>,
    baseline: Array2<f64>,
    dimensions: Vec<ClaimsDimension>,
}

impl CohortDataset {
    pub fn new(
        patient_ids: Vec<String>,
        treatment: Vec<u8>,
        outcome: Vec<u8>,
        baseline_names: Vec<String>,
        baseline: Array2<f64>,
        dimensions: Vec<ClaimsDimension>,
    ) -> Result<Self> {
        let n = patient_ids.len();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::invalid("treatment/outcome length differs from patient count"));
        }
        if treatment.iter().chain(&outcome).any(|&v| v > 1) {
            return Err(Error::invalid("treatment and outcome must be 0/1"));
        }
        if baseline.nrows() != n || baseline.ncols() != baseline_names.len() {
            return Err(Error::invalid(format!(
                "baseline is {}x{}, expected {}x{}",
                baseline.nrows(),
                baseline.ncols(),
                n,
                baseline_names.len()
            )));
        }
        if baseline.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("baseline covariates"));
        }
        if let Some(d) = dimensions.iter().find(|d| d.n_rows != n) {
            return Err(Error::invalid(format!(
                "dimension {} has {} rows, expected {n}",
                d.name, d.n_rows
            )));
        }
        let mut names = HashSet::new();
        for d in &dimensions {
            if !names.insert(d.name.as_str()) {
                return Err(Error::invalid(format!("duplicate dimension {}", d.name)));
            }
        }
        Ok(Self {
            patient_ids,
            treatment,
            outcome,
            baseline_names,
            baseline,
            dimensions,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn baseline(&self) -> ArrayView2<'_, f64> {
        self.baseline.view()
    }

    pub fn baseline_names(&self) -> &[String] {
        &self.baseline_names
    }

    pub fn dimensions(&self) -> &[ClaimsDimension] {
        &self.dimensions
    }

    /// Treatment labels restricted to `rows`.
    pub fn treatment_at(&self, rows: &[usize]) -> Vec<u8> {
        rows.iter().map(|&r| self.treatment[r]).collect()
    }

    pub fn total_codes(&self) -> usize {
        self.dimensions.iter().map(ClaimsDimension::n_codes).sum()
    }

    /// Copy of the dataset with every patient's rows reordered so that new row
    /// `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.n_patients();
        let mut check = order.to_vec();
        check.sort_unstable();
        if check.len() != n || check.iter().enumerate().any(|(i, &v)| i != v) {
            return Err(Error::invalid("permutation must be a rearrangement of 0..n"));
        }
        let mut inverse = vec![0u32; n];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new as u32;
        }
        let dims = self
            .dimensions
            .iter()
            .map(|d| {
                let cols = d
                    .columns
                    .iter()
                    .map(|c| CodeColumn::from_entries(c.iter().map(|(r, v)| (inverse[r], v)).collect()))
                    .collect::<Result<Vec<_>>>()?;
                ClaimsDimension::new(d.name.clone(), d.codes.clone(), cols, n)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            order.iter().map(|&i| self.patient_ids[i].clone()).collect(),
            order.iter().map(|&i| self.treatment[i]).collect(),
            order.iter().map(|&i| self.outcome[i]).collect(),
            self.baseline_names.clone(),
            self.baseline.select(Axis(0), order),
            dims,
        )
    }
}

fn open_reader(path: &Path) -> Result<Box<dyn Read>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(BufReader::new(f))))
    } else {
        Ok(Box::new(BufReader::new(f)))
    }
}

fn open_writer(path: &Path) -> Result<Box<dyn Write>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzEncoder::new(
            BufWriter::new(f),
            flate2::Compression::default(),
        )))
    } else {
        Ok(Box::new(BufWriter::new(f)))
    }
}

fn load_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_label(path: &Path, line: u64, field: &str, what: &str) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(load_err(path, line, format!("{what} must be 0 or 1, got {other:?}"))),
    }
}

/// Loads a cohort from a baseline CSV and a claims-triples CSV (either may be gzipped).
///
/// Baseline columns are `patient_id,treatment,outcome,<covariates...>`. Claims rows are
/// `patient_id,dimension:code,count`; an optional header whose first field is
/// `patient_id` is skipped. Dimensions and their codes are sorted by name.
pub fn load_cohort(baseline_path: impl AsRef<Path>, claims_path: impl AsRef<Path>) -> Result<CohortDataset> {
    let baseline_path = baseline_path.as_ref();
    let claims_path = claims_path.as_ref();

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open_reader(baseline_path)?);
    let header = rdr.headers()?.clone();
    if header.len() < 3
        || header.get(0).map(str::trim) != Some("patient_id")
        || header.get(1).map(str::trim) != Some("treatment")
        || header.get(2).map(str::trim) != Some("outcome")
    {
        return Err(load_err(
            baseline_path,
            1,
            "header must start with patient_id,treatment,outcome",
        ));
    }
    let names: Vec<String> = header.iter().skip(3).map(|s| s.trim().to_string()).collect();
    let p = names.len();

    let mut ids = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut values = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            load_err(baseline_path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != p + 3 {
            return Err(load_err(
                baseline_path,
                line,
                format!("expected {} fields, found {}", p + 3, rec.len()),
            ));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(load_err(baseline_path, line, "empty patient_id"));
        }
        if index.insert(id.clone(), ids.len()).is_some() {
            return Err(load_err(baseline_path, line, format!("duplicate patient_id {id}")));
        }
        treatment.push(parse_label(baseline_path, line, &rec[1], "treatment")?);
        outcome.push(parse_label(baseline_path, line, &rec[2], "outcome")?);
        for (j, field) in rec.iter().skip(3).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                load_err(
                    baseline_path,
                    line,
                    format!("column {}: cannot parse {field:?} as a number", names[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(load_err(
                    baseline_path,
                    line,
                    format!("column {}: missing or non-finite value", names[j]),
                ));
            }
            values.push(v);
        }
        ids.push(id);
    }
    let n = ids.len();
    let baseline = Array2::from_shape_vec((n, p), values).expect("row lengths checked");

    // dimension -> code -> entries
    let mut triples: BTreeMap<String, BTreeMap<String, Vec<(u32, u32)>>> = BTreeMap::new();
    let mut seen: HashSet<(usize, String)> = HashSet::new();
    let mut crdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(open_reader(claims_path)?);
    for (i, rec) in crdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            load_err(claims_path, line, e.to_string())
        })?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if i == 0 && rec.get(0).map(str::trim) == Some("patient_id") {
            continue;
        }
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != 3 {
            return Err(load_err(
                claims_path,
                line,
                format!("expected 3 fields, found {}", rec.len()),
            ));
        }
        let pid = rec[0].trim();
        let row = *index
            .get(pid)
            .ok_or_else(|| load_err(claims_path, line, format!("unknown patient_id {pid}")))?;
        let (dim, code) = rec[1]
            .trim()
            .split_once(':')
            .filter(|(d, c)| !d.is_empty() && !c.is_empty())
            .ok_or_else(|| load_err(claims_path, line, format!("expected dimension:code, got {:?}", &rec[1])))?;
        let count: i64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| load_err(claims_path, line, format!("cannot parse count {:?}", &rec[2])))?;
        if count <= 0 {
            return Err(load_err(
                claims_path,
                line,
                format!("count must be positive, got {count}"),
            ));
        }
        let count = u32::try_from(count).map_err(|_| load_err(claims_path, line, "count overflows u32"))?;
        if !seen.insert((row, rec[1].trim().to_string())) {
            return Err(load_err(
                claims_path,
                line,
                format!("duplicate row for patient {pid} and code {}", rec[1].trim()),
            ));
        }
        triples
            .entry(dim.to_string())
            .or_default()
            .entry(code.to_string())
            .or_default()
            .push((row as u32, count));
    }

    let dimensions = triples
        .into_iter()
        .map(|(dim, codes)| {
            let (names, cols): (Vec<_>, Vec<_>) = codes.into_iter().unzip();
            let cols = cols
                .into_iter()
                .map(CodeColumn::from_entries)
                .collect::<Result<Vec<_>>>()?;
            ClaimsDimension::new(dim, names, cols, n)
        })
        .collect::<Result<Vec<_>>>()?;

    CohortDataset::new(ids, treatment, outcome, names, baseline, dimensions)
}

/// Writes a cohort in the format read by [`load_cohort`]. Claims triples are written
/// ordered by dimension, code and patient row.
pub fn write_cohort(
    data: &CohortDataset,
    baseline_path: impl AsRef<Path>,
    claims_path: impl AsRef<Path>,
) -> Result<()> {
    let baseline_path = baseline_path.as_ref();
    let claims_path = claims_path.as_ref();
    {
        let mut w = csv::Writer::from_writer(open_writer(baseline_path)?);
        let mut header = vec!["patient_id".to_string(), "treatment".into(), "outcome".into()];
        header.extend(data.baseline_names.iter().cloned());
        w.write_record(&header)?;
        let mut rec = Vec::with_capacity(header.len());
        for i in 0..data.n_patients() {
            rec.clear();
            rec.push(data.patient_ids[i].clone());
            rec.push(data.treatment[i].to_string());
            rec.push(data.outcome[i].to_string());
            rec.extend(data.baseline.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(baseline_path, e))?;
    }
    let mut w = csv::Writer::from_writer(open_writer(claims_path)?);
    w.write_record(["patient_id", "code", "count"])?;
    for d in &data.dimensions {
        for (code, col) in d.codes.iter().zip(&d.columns) {
            let key = format!("{}:{}", d.name, code);
            for (r, c) in col.iter() {
                w.write_record([data.patient_ids[r].as_str(), key.as_str(), c.to_string().as_str()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(claims_path, e))?;
    Ok(())
}

/// Train/test and leave-group-out index sets. All sets are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub n: usize,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub lgo_train_idx: Vec<usize>,
    pub lgo_val_idx: Vec<usize>,
}

pub const DEFAULT_TEST_FRAC: f64 = 0.20;
pub const DEFAULT_LGO_FRAC: f64 = 0.10;

/// Seeded shuffle of `0..n` followed by prefix slicing: the first `round(test_frac*n)`
/// indices form the test set, and the first `round(lgo_frac*|train|)` of the shuffled
/// remainder form the LGO validation set.
pub fn make_split(n: usize, seed: u64, test_frac: f64, lgo_frac: f64) -> Result<SplitPlan> {
    if n < 10 {
        return Err(Error::invalid(format!("cannot split {n} rows; need at least 10")));
    }
    for (name, f) in [("test_frac", test_frac), ("lgo_frac", lgo_frac)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::invalid(format!("{name} must be in (0,1), got {f}")));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test = (test_frac * n as f64).round() as usize;
    let n_train = n - n_test;
    let n_val = (lgo_frac * n_train as f64).round() as usize;
    if n_test == 0 || n_val == 0 || n_val >= n_train {
        return Err(Error::invalid(format!(
            "split of {n} rows degenerates (test {n_test}, lgo validation {n_val})"
        )));
    }
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let (test, train) = order.split_at(n_test);
    let (val, lgo_train) = train.split_at(n_val);
    Ok(SplitPlan {
        seed,
        n,
        train_idx: sorted(train),
        test_idx: sorted(test),
        lgo_train_idx: sorted(lgo_train),
        lgo_val_idx: sorted(val),
    })
}

/// Per-column centering and scaling learned on a subset of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Population (divide-by-n) mean and standard deviation over `fit_rows`.
/// Columns with zero spread get scale 1.
pub fn fit_standardizer(matrix: ArrayView2<'_, f64>, fit_rows: &[usize]) -> Result<StandardizationParams> {
    if fit_rows.is_empty() {
        return Err(Error::invalid("cannot fit a standardizer on zero rows"));
    }
    let p = matrix.ncols();
    let m = fit_rows.len() as f64;
    let mut mean = vec![0.0; p];
    for &r in fit_rows {
        for (acc, v) in mean.iter_mut().zip(matrix.row(r)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; p];
    for &r in fit_rows {
        for ((acc, v), mu) in var.iter_mut().zip(matrix.row(r)).zip(&mean) {
            let d = v - mu;
            *acc += d * d;
        }
    }
    let scale = var
        .iter()
        .zip(&mean)
        .map(|(v, mu)| {
            let sd = (v / m).sqrt();
            if sd > 1e-12 * (1.0 + mu.abs()) {
                sd
            } else {
                1.0
            }
        })
        .collect();
    Ok(StandardizationParams { mean, scale })
}

impl StandardizationParams {
    pub fn n_columns(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, matrix: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if matrix.ncols() != self.mean.len() {
            return Err(Error::ColumnMismatch {
                expected: self.mean.len(),
                got: matrix.ncols(),
            });
        }
        let mut out = matrix.to_owned();
        for mut row in out.rows_mut() {
            for ((v, mu), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - mu) / s;
            }
        }
        Ok(out)
    }
}
