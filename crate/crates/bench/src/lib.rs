//! Shared fixtures for the benchmarks.

use ndarray::Array2;
use propsl::learners::FittedFeatures;
use propsl::synth::{generate, DimSpec, SynthConfig};
use propsl::{CohortDataset, FeatureView, HdpsConfig, SplitPlan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A synthetic cohort with `n` patients and two dimensions of `codes` codes each.
pub fn cohort(n: usize, codes: usize, seed: u64) -> CohortDataset {
    let cfg = SynthConfig {
        n_patients: n,
        dims: ["dx", "rx"]
            .into_iter()
            .map(|name| DimSpec {
                name: name.into(),
                n_codes: codes,
            })
            .collect(),
        n_signal_codes: 20.min(2 * codes),
        seed,
        ..SynthConfig::default()
    };
    generate(&cfg).expect("valid fixture config").data
}

pub fn split(data: &CohortDataset, seed: u64) -> SplitPlan {
    propsl::make_split(data.n_patients(), seed, 0.2, 0.1).expect("fixture is large enough")
}

/// Standardized baseline + hdPS design on the training rows, with treatment labels.
pub fn design(data: &CohortDataset, split: &SplitPlan, hdps: HdpsConfig) -> (Array2<f64>, Vec<u8>) {
    let ff = FittedFeatures::fit(FeatureView::BaselineHdps { hdps }, data, &split.train_idx).expect("features fit");
    let x = ff.transform(data, &split.train_idx).expect("same schema");
    (x, data.treatment_at(&split.train_idx))
}

/// Random prediction matrix and labels for weight fitting.
pub fn prediction_matrix(m: usize, j: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<u8> = (0..m).map(|_| u8::from(rng.random_bool(0.3))).collect();
    let z = Array2::from_shape_fn((m, j), |(i, c)| {
        let signal = if y[i] == 1 { 0.15 } else { -0.15 } * (c as f64 + 1.0) / j as f64;
        (0.3 + signal + 0.2 * (rng.random::<f64>() - 0.5)).clamp(0.01, 0.99)
    });
    (z, y)
}
