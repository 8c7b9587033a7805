//! Counterfactual outcome prediction when part of the confounders is hidden
//! under the desired treatment.
//!
//! The crate bundles a multi-location synthetic study generator with sealed
//! ground truth, label estimation for dual-treatment samples, two-stage
//! regression-adjustment and doubly-robust learners with cross-fitting, and
//! evaluation tooling (ground-truth MSE, a doubly-robust error estimator,
//! per-location acceptance/failure rates, and a risk-ranked policy swap).

pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod learners;
pub mod model;
pub mod regress;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    mask_selective, predict, Aggregate, FittedPredictor, GenConfig, Learner, LinearModel,
    LogitModel, ObservedSample, Split, Study, StudyView, Treatment, TruthRecord,
};
