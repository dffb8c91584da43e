//! Independent oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use ndarray::Array2;
use propsl::cohort::{ClaimsDimension, CodeColumn};
use propsl::synth::{generate, DimSpec, SynthConfig};
use propsl::{CohortDataset, HdpsConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// O(n^2) Mann-Whitney count in half-pair units.
pub fn brute_auc(p: &[f64], y: &[u8]) -> f64 {
    let (mut half, mut npos, mut nneg) = (0u128, 0u128, 0u128);
    for i in 0..p.len() {
        if y[i] == 1 {
            npos += 1;
        } else {
            nneg += 1;
        }
        if y[i] != 1 {
            continue;
        }
        for j in 0..p.len() {
            if y[j] == 0 {
                if p[i] > p[j] {
                    half += 2;
                } else if p[i] == p[j] {
                    half += 1;
                }
            }
        }
    }
    half as f64 / (2 * npos * nneg) as f64
}

/// Mean Bernoulli NLL with the 1e-15 clip, written out directly.
pub fn brute_nll(p: &[f64], y: &[u8]) -> f64 {
    let mut s = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        let q = pi.clamp(1e-15, 1.0 - 1e-15);
        s -= if yi == 1 { q.ln() } else { (1.0 - q).ln() };
    }
    s / p.len() as f64
}

/// Smallest mixture NLL over the simplex grid with step `1/res` (four columns).
pub fn simplex_grid_min(z: &Array2<f64>, y: &[u8], res: usize) -> f64 {
    assert_eq!(z.ncols(), 4);
    let mut best = f64::INFINITY;
    for a in 0..=res {
        for b in 0..=res - a {
            for c in 0..=res - a - b {
                let d = res - a - b - c;
                let w = [a, b, c, d].map(|v| v as f64 / res as f64);
                let p: Vec<f64> = z
                    .rows()
                    .into_iter()
                    .map(|r| (0..4).map(|j| r[j] * w[j]).sum())
                    .collect();
                best = best.min(brute_nll(&p, y));
            }
        }
    }
    best
}

/// A small random claims cohort stored densely alongside the library representation.
pub struct DenseCohort {
    pub data: CohortDataset,
    /// `counts[d][c][row]`
    pub counts: Vec<Vec<Vec<u32>>>,
    pub dim_names: Vec<String>,
    pub code_names: Vec<Vec<String>>,
}

pub fn random_dense_cohort(rng: &mut ChaCha8Rng) -> DenseCohort {
    let n = rng.random_range(12..=100);
    let n_dims = rng.random_range(1..=3);
    let mut counts = Vec::new();
    let mut dims = Vec::new();
    let mut dim_names = Vec::new();
    let mut code_names = Vec::new();
    for d in 0..n_dims {
        let n_codes = rng.random_range(1..=15);
        let mut dcounts = Vec::new();
        let mut names = Vec::new();
        for c in 0..n_codes {
            let prev = rng.random_range(0.0..0.9);
            let col: Vec<u32> = (0..n)
                .map(|_| {
                    if rng.random_bool(prev) {
                        rng.random_range(1..=6)
                    } else {
                        0
                    }
                })
                .collect();
            dcounts.push(col);
            names.push(format!("k{c:02}"));
        }
        let columns = dcounts.iter().map(|c| CodeColumn::from_dense(c)).collect();
        let name = format!("d{d}");
        dims.push(ClaimsDimension::new(name.clone(), names.clone(), columns, n).unwrap());
        dim_names.push(name);
        counts.push(dcounts);
        code_names.push(names);
    }
    let mut treatment: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    treatment[0] = 1;
    treatment[1] = 0;
    let outcome: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
    let ids = (0..n).map(|i| format!("p{i}")).collect();
    let baseline = Array2::zeros((n, 0));
    let data = CohortDataset::new(ids, treatment, outcome, vec![], baseline, dims).unwrap();
    DenseCohort {
        data,
        counts,
        dim_names,
        code_names,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCovariate {
    pub dimension: String,
    pub code: String,
    /// 0 = once, 1 = sporadic, 2 = frequent
    pub kind: usize,
    pub threshold: u32,
    pub column: Vec<u8>,
    pub abs_log_bias: f64,
    pub bias: f64,
}

/// Nearest-rank thresholds by integer arithmetic: element ceil(m/2) and ceil(3m/4).
pub fn oracle_thresholds(nonzero: &[u32]) -> [u32; 3] {
    let mut s = nonzero.to_vec();
    s.sort();
    let m = s.len();
    [1, s[(m + 1) / 2 - 1], s[(3 * m + 3) / 4 - 1]]
}

/// Distinct recurrence indicators of one dense count vector, judged on `fit`.
pub fn oracle_expand(counts: &[u32], fit: &[bool]) -> Vec<(usize, u32, Vec<u8>)> {
    let nonzero: Vec<u32> = counts
        .iter()
        .zip(fit)
        .filter(|(c, f)| **f && **c > 0)
        .map(|(c, _)| *c)
        .collect();
    if nonzero.is_empty() {
        return Vec::new();
    }
    let th = oracle_thresholds(&nonzero);
    let mut out: Vec<(usize, u32, Vec<u8>)> = Vec::new();
    for (kind, &t) in th.iter().enumerate() {
        let col: Vec<u8> = counts.iter().map(|&c| u8::from(c >= t)).collect();
        let on_fit = |v: &Vec<u8>| -> Vec<u8> { v.iter().zip(fit).filter(|(_, f)| **f).map(|(x, _)| *x).collect() };
        if out.iter().any(|(_, _, prev)| on_fit(prev) == on_fit(&col)) {
            continue;
        }
        out.push((kind, t, col));
    }
    out
}

/// Full hdPS selection recomputed from dense 2x2 tables.
pub fn oracle_select(dc: &DenseCohort, n_per_dim: usize, k: usize, rows: &[usize]) -> Vec<OracleCovariate> {
    let n = dc.data.n_patients();
    let mut fit = vec![false; n];
    for &r in rows {
        fit[r] = true;
    }
    let m = fit.iter().filter(|f| **f).count();
    let t = dc.data.treatment();
    let y = dc.data.outcome();
    let mut cands = Vec::new();
    for (d, dcounts) in dc.counts.iter().enumerate() {
        let mut screened: Vec<(usize, usize)> = dcounts
            .iter()
            .enumerate()
            .map(|(c, col)| (c, (0..n).filter(|&i| fit[i] && col[i] > 0).count()))
            .filter(|&(_, cnt)| cnt > 0)
            .collect();
        screened.sort_by(|a, b| {
            b.1.min(m - b.1)
                .cmp(&a.1.min(m - a.1))
                .then(dc.code_names[d][a.0].cmp(&dc.code_names[d][b.0]))
        });
        screened.truncate(n_per_dim);
        for (c, _) in screened {
            for (kind, threshold, column) in oracle_expand(&dcounts[c], &fit) {
                let (mut a, mut b, mut n1, mut n0, mut ev1, mut ev0, mut nc1, mut nc0) = (0, 0, 0, 0, 0, 0, 0, 0);
                for i in (0..n).filter(|&i| fit[i]) {
                    let cov = column[i] == 1;
                    if t[i] == 1 {
                        n1 += 1;
                        a += usize::from(cov);
                    } else {
                        n0 += 1;
                        b += usize::from(cov);
                    }
                    if cov {
                        nc1 += 1;
                        ev1 += usize::from(y[i]);
                    } else {
                        nc0 += 1;
                        ev0 += usize::from(y[i]);
                    }
                }
                let risk = |e: usize, tot: usize| {
                    let p = if tot == 0 { 0.0 } else { e as f64 / tot as f64 };
                    p.max(1e-6).min(1.0 - 1e-6)
                };
                let r = risk(ev1, nc1) / risk(ev0, nc0);
                let rr = if r >= 1.0 { r } else { 1.0 / r };
                let pc1 = a as f64 / n1 as f64;
                let pc0 = b as f64 / n0 as f64;
                let bias = (pc1 * (rr - 1.0) + 1.0) / (pc0 * (rr - 1.0) + 1.0);
                cands.push((
                    OracleCovariate {
                        dimension: dc.dim_names[d].clone(),
                        code: dc.code_names[d][c].clone(),
                        kind,
                        threshold,
                        column,
                        abs_log_bias: bias.ln().abs(),
                        bias,
                    },
                    nc1.min(m - nc1),
                ));
            }
        }
    }
    cands.sort_by(|(a, ba), (b, bb)| {
        b.abs_log_bias
            .partial_cmp(&a.abs_log_bias)
            .unwrap()
            .then(bb.cmp(ba))
            .then(a.dimension.cmp(&b.dimension))
            .then(a.code.cmp(&b.code))
            .then(a.kind.cmp(&b.kind))
    });
    cands.truncate(k);
    cands.into_iter().map(|(c, _)| c).collect()
}

pub fn synth_config(n: usize, codes_per_dim: usize, n_signal: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_patients: n,
        dims: ["dx", "rx"]
            .into_iter()
            .map(|name| DimSpec {
                name: name.into(),
                n_codes: codes_per_dim,
            })
            .collect(),
        n_signal_codes: n_signal,
        seed,
        ..SynthConfig::default()
    }
}

pub fn synth_cohort(n: usize, codes_per_dim: usize, n_signal: usize, seed: u64) -> CohortDataset {
    generate(&synth_config(n, codes_per_dim, n_signal, seed)).unwrap().data
}

/// Cohort whose treatment follows a logistic model in standard-normal baseline columns,
/// with `coef[j]` the slope on column `j`, plus one small claims dimension of noise.
pub fn baseline_cohort(n: usize, seed: u64, coef: &[f64]) -> CohortDataset {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    let x = Array2::from_shape_fn((n, coef.len()), |_| rng.sample::<f64, _>(normal));
    let treatment: Vec<u8> = (0..n)
        .map(|i| {
            let eta: f64 = -0.3 + coef.iter().enumerate().map(|(j, b)| b * x[[i, j]]).sum::<f64>();
            u8::from(rng.random_bool(1.0 / (1.0 + (-eta).exp())))
        })
        .collect();
    from_parts(&mut rng, x, treatment)
}

/// Cohort with baseline columns `[treatment, noise]`, so a glm on the first column
/// predicts treatment perfectly.
pub fn leaky_cohort(n: usize, seed: u64) -> CohortDataset {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let treatment: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, j)| {
        if j == 0 {
            f64::from(treatment[i])
        } else {
            rng.random_range(-1.0..1.0)
        }
    });
    from_parts(&mut rng, x, treatment)
}

fn from_parts(rng: &mut ChaCha8Rng, x: Array2<f64>, treatment: Vec<u8>) -> CohortDataset {
    let n = treatment.len();
    let outcome: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.2))).collect();
    let columns: Vec<CodeColumn> = (0..6)
        .map(|_| {
            let c: Vec<u32> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        rng.random_range(1..4)
                    } else {
                        0
                    }
                })
                .collect();
            CodeColumn::from_dense(&c)
        })
        .collect();
    let codes = (0..6).map(|c| format!("z{c}")).collect();
    let dim = ClaimsDimension::new("dx", codes, columns, n).unwrap();
    let names = (0..x.ncols()).map(|j| format!("b{j}")).collect();
    let ids = (0..n).map(|i| format!("p{i:05}")).collect();
    CohortDataset::new(ids, treatment, outcome, names, x, vec![dim]).unwrap()
}

/// A run configuration with trimmed grids that benchmarks a small synthetic cohort in
/// a few seconds.
pub fn small_run_config(n: usize, seed: u64) -> propsl::RunConfig {
    use propsl::pipeline::{LearnerGrids, SweepConfig};
    propsl::RunConfig {
        seed,
        methods: Some(
            [
                "glm",
                "lasso",
                "gbm",
                "hdps(k=20,n=10)",
                "hdps(k=40,n=20)",
                "hdps_lasso(k=40,n=20)",
                "SL1",
                "SL2",
                "SL3",
                "dSL2",
            ]
            .map(String::from)
            .to_vec(),
        ),
        hdps_grid: vec![HdpsConfig::new(10, 20), HdpsConfig::new(20, 40)],
        sl3_hdps: HdpsConfig::new(20, 40),
        synth: Some(synth_config(n, 40, 8, seed)),
        learners: LearnerGrids {
            lasso_path_len: 6,
            lasso_min_ratio: 1e-2,
            gbm_trees: vec![20, 40],
            gbm_depths: vec![2],
            gbm_shrinkage: vec![0.1],
            cart_depths: vec![3],
            ..LearnerGrids::default()
        },
        sweep: SweepConfig {
            ratios: vec![0.5],
            k: vec![5, 20, 60],
        },
        ..propsl::RunConfig::default()
    }
}
