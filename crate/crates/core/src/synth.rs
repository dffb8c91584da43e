//! Synthetic claims cohorts with a known treatment mechanism.
//!
//! Each code has a power-law prevalence by rank; a patient either has no claims for the
//! code or a count of `1 + Poisson(count_rate)`. Treatment is logistic in the baseline
//! columns and in presence indicators of a random set of signal codes, with an intercept
//! calibrated by bisection so the treated fraction hits the target. The outcome is
//! logistic in treatment and the same confounders.

use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{ClaimsDimension, CodeColumn, CohortDataset};
use crate::error::{Error, Result};
use crate::learners::derive_seed;
use crate::learners::logistic::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimSpec {
    pub name: String,
    pub n_codes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    /// Standard normal baseline columns.
    pub n_baseline: usize,
    /// Bernoulli(0.5) demographic columns appended after the normal ones.
    pub n_demographic: usize,
    pub dims: Vec<DimSpec>,
    /// Prevalence of the code at rank `r` (0-based) is `max_prevalence * (r+1)^-exponent`.
    pub code_prevalence_exponent: f64,
    pub max_prevalence: f64,
    /// Mean of the Poisson excess over one claim.
    pub count_rate: f64,
    pub n_signal_codes: usize,
    /// Treatment log-odds per standard deviation of each baseline column.
    pub beta_baseline: f64,
    /// Treatment log-odds per signal code present.
    pub beta_codes: f64,
    pub outcome_beta: OutcomeBeta,
    pub target_treated_frac: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeBeta {
    pub intercept: f64,
    pub treatment: f64,
    /// Multiplies the treatment model's confounder score.
    pub confounders: f64,
}

impl Default for OutcomeBeta {
    fn default() -> Self {
        Self {
            intercept: -2.0,
            treatment: 0.3,
            confounders: 0.8,
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 5000,
            n_baseline: 8,
            n_demographic: 2,
            dims: vec![
                DimSpec {
                    name: "dx".into(),
                    n_codes: 200,
                },
                DimSpec {
                    name: "rx".into(),
                    n_codes: 200,
                },
            ],
            code_prevalence_exponent: 0.6,
            max_prevalence: 0.5,
            count_rate: 1.5,
            n_signal_codes: 20,
            beta_baseline: 0.15,
            beta_codes: 0.8,
            outcome_beta: OutcomeBeta::default(),
            target_treated_frac: 0.3,
            seed: 1,
        }
    }
}

/// Largest allowed gap between the realized and target treated fractions.
pub const CALIBRATION_TOL: f64 = 0.03;

impl SynthConfig {
    pub fn total_codes(&self) -> usize {
        self.dims.iter().map(|d| d.n_codes).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_patients < 10 {
            return fail(format!("n_patients must be at least 10, got {}", self.n_patients));
        }
        if self.n_signal_codes > self.total_codes() {
            return fail(format!(
                "n_signal_codes = {} exceeds the {} codes available",
                self.n_signal_codes,
                self.total_codes()
            ));
        }
        if !(self.target_treated_frac > 0.05 && self.target_treated_frac < 0.95) {
            return fail(format!(
                "target_treated_frac must lie in (0.05, 0.95), got {}",
                self.target_treated_frac
            ));
        }
        if !(self.code_prevalence_exponent > 0.0) {
            return fail("code_prevalence_exponent must be positive".into());
        }
        if !(self.max_prevalence > 0.0 && self.max_prevalence <= 1.0) {
            return fail("max_prevalence must lie in (0, 1]".into());
        }
        if !(self.count_rate >= 0.0 && self.count_rate.is_finite()) {
            return fail("count_rate must be finite and nonnegative".into());
        }
        let coefs = [
            self.beta_baseline,
            self.beta_codes,
            self.outcome_beta.intercept,
            self.outcome_beta.treatment,
            self.outcome_beta.confounders,
        ];
        if coefs.iter().any(|c| !c.is_finite()) {
            return fail("coefficients must be finite".into());
        }
        let mut names: Vec<&str> = self.dims.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return fail("dimension names must be unique".into());
        }
        if self
            .dims
            .iter()
            .any(|d| d.name.is_empty() || d.name.contains([':', ',']) || d.n_codes == 0)
        {
            return fail("dimension names must be nonempty without ':' or ',' and have at least one code".into());
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Prevalence of the code with rank `r` inside its dimension.
    pub fn prevalence(&self, rank: usize) -> f64 {
        self.max_prevalence * ((rank + 1) as f64).powf(-self.code_prevalence_exponent)
    }
}

/// A generated cohort and the parameters of its treatment mechanism.
#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub data: CohortDataset,
    /// `(dimension, code, coefficient)` for each signal code.
    pub signal_codes: Vec<(String, String, f64)>,
    pub baseline_coef: Vec<f64>,
    pub intercept: f64,
    /// True treatment probabilities.
    pub propensity: Vec<f64>,
}

fn stream(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose))
}

/// Finds the intercept whose realized treated fraction (under fixed uniforms) is
/// closest to `target`.
fn calibrate(eta: &[f64], u: &[f64], target: f64) -> Result<(f64, Vec<u8>)> {
    let treated = |a: f64| -> Vec<u8> {
        eta.iter()
            .zip(u)
            .map(|(e, ui)| u8::from(*ui < sigmoid(a + e)))
            .collect()
    };
    let frac = |t: &[u8]| t.iter().map(|&v| f64::from(v)).sum::<f64>() / t.len() as f64;
    let (mut lo, mut hi) = (-50.0_f64, 50.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(&treated(mid)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = [lo, hi]
        .into_iter()
        .min_by(|a, b| {
            (frac(&treated(*a)) - target)
                .abs()
                .total_cmp(&(frac(&treated(*b)) - target).abs())
        })
        .expect("two candidates");
    let t = treated(best);
    let got = frac(&t);
    if (got - target).abs() > CALIBRATION_TOL {
        return Err(Error::Numerical(format!(
            "treated fraction {got:.4} cannot be calibrated to within {CALIBRATION_TOL} of {target}"
        )));
    }
    Ok((best, t))
}

pub fn generate(config: &SynthConfig) -> Result<SynthCohort> {
    config.validate()?;
    let n = config.n_patients;
    let seed = config.seed;

    let nb = config.n_baseline + config.n_demographic;
    let mut brng = stream(seed, "baseline");
    let baseline = Array2::from_shape_fn((n, nb), |(_, j)| {
        if j < config.n_baseline {
            brng.sample::<f64, _>(StandardNormal)
        } else {
            f64::from(u8::from(brng.random_bool(0.5)))
        }
    });
    let mut names: Vec<String> = (1..=config.n_baseline).map(|j| format!("x{j}")).collect();
    names.extend((1..=config.n_demographic).map(|j| format!("demo{j}")));

    // Counts per dimension and code; each code has its own stream so that adding
    // dimensions does not disturb the others.
    let poisson = (config.count_rate > 0.0)
        .then(|| Poisson::new(config.count_rate).map_err(|e| Error::Config(e.to_string())))
        .transpose()?;
    let mut dims = Vec::with_capacity(config.dims.len());
    for spec in &config.dims {
        let width = spec.n_codes.saturating_sub(1).to_string().len().max(3);
        let codes: Vec<String> = (0..spec.n_codes).map(|c| format!("c{c:0width$}")).collect();
        let columns = (0..spec.n_codes)
            .map(|c| {
                let mut rng = stream(seed, &format!("codes:{}:{c}", spec.name));
                let p = config.prevalence(c);
                let entries: Vec<(u32, u32)> = (0..n as u32)
                    .filter_map(|row| {
                        rng.random_bool(p).then(|| {
                            let extra = poisson.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                            (row, 1 + extra as u32)
                        })
                    })
                    .collect();
                CodeColumn::from_entries(entries)
            })
            .collect::<Result<Vec<_>>>()?;
        dims.push(ClaimsDimension::new(spec.name.clone(), codes, columns, n)?);
    }

    // Signal codes come from the most prevalent quarter of all codes.
    let mut by_prev: Vec<(f64, usize, usize)> = dims
        .iter()
        .enumerate()
        .flat_map(|(d, dim)| (0..dim.n_codes()).map(move |c| (d, c)))
        .map(|(d, c)| (config.prevalence(c), d, c))
        .collect();
    by_prev.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let pool = (by_prev.len() / 4).max(config.n_signal_codes).min(by_prev.len());
    let mut srng = stream(seed, "signal");
    let mut picks = sample(&mut srng, pool, config.n_signal_codes).into_vec();
    picks.sort_unstable();
    let mut signal_codes = Vec::with_capacity(picks.len());
    let mut eta = vec![0.0; n];
    for &i in &picks {
        let (_, d, c) = by_prev[i];
        let coef = if srng.random_bool(0.5) {
            config.beta_codes
        } else {
            -config.beta_codes
        };
        for (row, _) in dims[d].column(c).iter() {
            eta[row] += coef;
        }
        signal_codes.push((dims[d].name().to_string(), dims[d].codes()[c].clone(), coef));
    }
    let baseline_coef: Vec<f64> = (0..nb)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            // demographics are Bernoulli(0.5), sd 0.5
            let scale = if j < config.n_baseline { 1.0 } else { 2.0 };
            sign * config.beta_baseline * scale
        })
        .collect();
    for (e, row) in eta.iter_mut().zip(baseline.rows()) {
        *e += row.iter().zip(&baseline_coef).map(|(x, b)| x * b).sum::<f64>();
    }

    let mut trng = stream(seed, "treatment");
    let u: Vec<f64> = (0..n).map(|_| trng.random::<f64>()).collect();
    let (intercept, treatment) = calibrate(&eta, &u, config.target_treated_frac)?;
    let propensity: Vec<f64> = eta.iter().map(|e| sigmoid(intercept + e)).collect();

    let ob = &config.outcome_beta;
    let mut orng = stream(seed, "outcome");
    let outcome: Vec<u8> = eta
        .iter()
        .zip(&treatment)
        .map(|(e, &t)| {
            let p = sigmoid(ob.intercept + ob.treatment * f64::from(t) + ob.confounders * e);
            u8::from(orng.random::<f64>() < p)
        })
        .collect();

    let ids = (1..=n).map(|i| format!("P{i:07}")).collect();
    let data = CohortDataset::new(ids, treatment, outcome, names, baseline, dims)?;
    Ok(SynthCohort {
        data,
        signal_codes,
        baseline_coef,
        intercept,
        propensity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_patients: 800,
            dims: vec![DimSpec {
                name: "dx".into(),
                n_codes: 40,
            }],
            n_signal_codes: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.data, b.data);
        let c = generate(&SynthConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn treated_fraction_is_calibrated() {
        for target in [0.1, 0.3, 0.6] {
            let s = generate(&SynthConfig {
                target_treated_frac: target,
                ..small()
            })
            .unwrap();
            let t = s.data.treatment();
            let frac = t.iter().map(|&v| f64::from(v)).sum::<f64>() / t.len() as f64;
            assert!((frac - target).abs() <= CALIBRATION_TOL, "{frac} vs {target}");
        }
    }

    #[test]
    fn counts_are_recurrence_friendly() {
        let s = generate(&small()).unwrap();
        let col = s.data.dimensions()[0].column(0);
        assert!(col.counts().iter().all(|&c| c >= 1));
        assert!(col.counts().iter().any(|&c| c >= 3));
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig {
            n_signal_codes: 41,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            target_treated_frac: 0.97,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthConfig::from_toml_str("n_patients = 100\nbogus = 1\n").is_err());
        let cfg =
            SynthConfig::from_toml_str("n_patients = 100\nn_signal_codes = 2\n[[dims]]\nname = \"pr\"\nn_codes = 5\n")
                .unwrap();
        assert_eq!(cfg.dims.len(), 1);
        assert_eq!(cfg.n_signal_codes, 2);
        assert_eq!(cfg.n_baseline, SynthConfig::default().n_baseline);
    }
}
