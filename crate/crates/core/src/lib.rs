//! Propensity score prediction on claims cohorts: hdPS covariate generation, a library
//! of base learners and a sample-split Super Learner.

pub mod cohort;
pub mod error;
pub mod hdps;
pub mod learners;
pub mod metrics;
pub mod pipeline;
pub mod superlearner;
pub mod synth;

pub use cohort::{load_cohort, make_split, write_cohort, CohortDataset, SplitPlan, StandardizationParams};
pub use error::{Error, Result};
pub use hdps::{HdpsConfig, HdpsSelection};
pub use learners::{CohortModel, FeatureView, FittedModel, HyperParams, Learner};
pub use metrics::{auc, nll, EvalReport};
pub use pipeline::{Method, RunConfig, SavedModel};
pub use superlearner::{fit_sample_split_sl, solve_simplex_nll, EnsembleWeights, SlLibrary, SlModel, SlPreset};
pub use synth::{generate, SynthConfig};
