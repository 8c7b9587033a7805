//! Core domain types: samples, sealed ground truth, study containers, and
//! fitted-model containers shared by the generator, learners, and evaluation.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Observed treatment for a sample.
///
/// `A1` is the desired treatment (e.g. in-home placement), `A2` the
/// alternative, and `A3` the dual-treatment case whose decision was reverted
/// from `A2` back to `A1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Treatment {
    A1,
    A2,
    A3,
}

impl Treatment {
    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::A1 => "a1",
            Treatment::A2 => "a2",
            Treatment::A3 => "a3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "a1" => Ok(Treatment::A1),
            "a2" => Ok(Treatment::A2),
            "a3" => Ok(Treatment::A3),
            other => Err(Error::Parse(format!("unknown treatment label '{other}'"))),
        }
    }
}

/// One case as a learner sees it. Hidden confounders `z` are absent exactly
/// when the sample received the desired treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSample {
    pub location: usize,
    pub t: Treatment,
    pub y: f64,
    pub x: Vec<f64>,
    pub z: Option<Vec<f64>>,
}

/// Generator-side sealed ground truth for one sample. Learners never read
/// these; evaluation and oracle diagnostics do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub nu: f64,
    pub mu_a1: f64,
    pub mu_a3: f64,
    pub y_a1: f64,
    pub pi: f64,
    pub z_full: Vec<f64>,
}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Number of locations (decision policies).
    pub locations: usize,
    /// Samples per location.
    pub samples_per_location: usize,
    /// Confounder dimension; `x` and `z` each have this length.
    pub dim: usize,
    /// Count of observed confounders entering the outcome model.
    pub k_x: usize,
    /// Count of hidden confounders entering the outcome model.
    pub k_z: usize,
    /// Correlation between paired observed and hidden confounders.
    pub rho: f64,
    /// Treatment-effect scale between the desired and dual treatments.
    pub tau: f64,
    /// Per-location acceptance-rate range; one rate is drawn per location.
    pub ar_range: (f64, f64),
    pub seed: u64,
}

impl GenConfig {
    /// Full-scale profile: 20 locations x 1000 samples, 250-dim confounders.
    pub fn full() -> Self {
        GenConfig {
            locations: 20,
            samples_per_location: 1000,
            dim: 250,
            k_x: 25,
            k_z: 25,
            rho: 0.25,
            tau: 0.5,
            ar_range: (0.3, 0.5),
            seed: 0,
        }
    }

    /// Desk-scale profile for quick runs and CI.
    pub fn fast() -> Self {
        GenConfig {
            dim: 50,
            k_x: 10,
            k_z: 10,
            samples_per_location: 250,
            ..GenConfig::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.locations == 0 || self.samples_per_location == 0 {
            return Err(Error::InvalidConfig(
                "locations and samples_per_location must be positive".into(),
            ));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be positive".into()));
        }
        if self.k_x == 0 || self.k_x > self.dim {
            return Err(Error::InvalidConfig(format!(
                "k_x must be in 1..={}, got {}",
                self.dim, self.k_x
            )));
        }
        if self.k_z > self.dim {
            return Err(Error::InvalidConfig(format!(
                "k_z must be in 0..={}, got {}",
                self.dim, self.k_z
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!(
                "rho must be in [0,1), got {}",
                self.rho
            )));
        }
        if self.tau < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tau must be >= 0, got {}",
                self.tau
            )));
        }
        let (lo, hi) = self.ar_range;
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return Err(Error::InvalidConfig(format!(
                "ar_range must satisfy 0 < lo <= hi < 1, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    /// Common outcome-scale coefficient `k_x / (k_x + rho * k_z)`.
    pub fn effect_scale(&self) -> f64 {
        self.k_x as f64 / (self.k_x as f64 + self.rho * self.k_z as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// A collection of location-tagged samples, their sealed truth records, the
/// generator config that produced them, and a train/test marker per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub samples: Vec<ObservedSample>,
    pub truth: Vec<TruthRecord>,
    pub config: GenConfig,
    pub split: Vec<Split>,
}

impl Study {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn location_ids(&self) -> BTreeSet<usize> {
        self.samples.iter().map(|s| s.location).collect()
    }

    /// Re-mark the train/test split, stratified per location. `test_fraction`
    /// of each location's samples (rounded down) become test samples.
    pub fn assign_split(&mut self, test_fraction: f64, seed: u64) {
        let locs = self.location_ids();
        for loc in locs {
            let mut idx: Vec<usize> = (0..self.len())
                .filter(|&i| self.samples[i].location == loc)
                .collect();
            let mut rng = rng::stream(seed, &[rng::SPLIT, loc as u64]);
            idx.shuffle(&mut rng);
            let n_test = ((idx.len() as f64) * test_fraction).floor() as usize;
            for (pos, &i) in idx.iter().enumerate() {
                self.split[i] = if pos < n_test {
                    Split::Test
                } else {
                    Split::Train
                };
            }
        }
    }

    pub fn view(&self) -> StudyView<'_> {
        StudyView {
            study: self,
            indices: (0..self.len()).collect(),
        }
    }

    pub fn train_view(&self) -> StudyView<'_> {
        StudyView {
            study: self,
            indices: (0..self.len())
                .filter(|&i| self.split[i] == Split::Train)
                .collect(),
        }
    }

    pub fn test_view(&self) -> StudyView<'_> {
        StudyView {
            study: self,
            indices: (0..self.len())
                .filter(|&i| self.split[i] == Split::Test)
                .collect(),
        }
    }

    /// Index-alignment and masking checks; used by tests and after loading.
    pub fn check_invariants(&self) -> Result<()> {
        if self.samples.len() != self.truth.len() || self.samples.len() != self.split.len() {
            return Err(Error::InvalidConfig(format!(
                "misaligned study: {} samples, {} truth records, {} split marks",
                self.samples.len(),
                self.truth.len(),
                self.split.len()
            )));
        }
        let d = self.config.dim;
        for (i, s) in self.samples.iter().enumerate() {
            if s.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.x.len(),
                });
            }
            match (&s.z, s.t) {
                (None, Treatment::A1) => {}
                (Some(z), t) if t != Treatment::A1 => {
                    if z.len() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            got: z.len(),
                        });
                    }
                }
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "sample {i}: hidden confounders must be absent iff treatment is a1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A borrowed subset of a study, by sample index.
#[derive(Debug, Clone)]
pub struct StudyView<'a> {
    pub study: &'a Study,
    pub indices: Vec<usize>,
}

impl<'a> StudyView<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &'a ObservedSample)> + '_ {
        self.indices
            .iter()
            .map(move |&i| (i, &self.study.samples[i]))
    }

    pub fn with_treatment(&self, t: Treatment) -> Vec<usize> {
        self.indices
            .iter()
            .copied()
            .filter(|&i| self.study.samples[i].t == t)
            .collect()
    }

    pub fn only_locations(&self, locs: &BTreeSet<usize>) -> StudyView<'a> {
        StudyView {
            study: self.study,
            indices: self
                .indices
                .iter()
                .copied()
                .filter(|&i| locs.contains(&self.study.samples[i].location))
                .collect(),
        }
    }

    pub fn excluding_locations(&self, locs: &BTreeSet<usize>) -> StudyView<'a> {
        StudyView {
            study: self.study,
            indices: self
                .indices
                .iter()
                .copied()
                .filter(|&i| !locs.contains(&self.study.samples[i].location))
                .collect(),
        }
    }
}

/// Masking rule for hidden confounders: absent exactly under the desired
/// treatment, untouched otherwise.
pub fn mask_selective(z_full: &[f64], t: Treatment) -> Option<Vec<f64>> {
    match t {
        Treatment::A1 => None,
        _ => Some(z_full.to_vec()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    XOnly,
    XAndZ,
}

/// Fitted linear regression: `y = coefficients . features + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub feature_mode: FeatureMode,
}

/// Fitted logistic probability model with clipped predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub clip_epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregate {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Learner {
    Sp,
    Ra,
    Dr,
}

impl Learner {
    pub fn as_str(self) -> &'static str {
        match self {
            Learner::Sp => "SP",
            Learner::Ra => "RA",
            Learner::Dr => "DR",
        }
    }
}

/// A target estimator: per-fold second-stage models plus the nuisance models
/// that produced their pseudo-outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedPredictor {
    pub learner: Learner,
    pub fold_models: Vec<LinearModel>,
    pub nuisance_mu: Option<Vec<LinearModel>>,
    pub nuisance_pi: Option<Vec<LogitModel>>,
    pub aggregate: Aggregate,
}

impl FittedPredictor {
    pub fn validate(&self) -> Result<()> {
        let min_folds = match self.learner {
            Learner::Sp => 1,
            Learner::Ra => 2,
            Learner::Dr => 3,
        };
        if self.fold_models.len() < min_folds {
            return Err(Error::InvalidModel(format!(
                "{} predictor needs >= {} fold models, has {}",
                self.learner.as_str(),
                min_folds,
                self.fold_models.len()
            )));
        }
        if self.learner == Learner::Sp
            && (self.fold_models.len() != 1 || self.nuisance_mu.is_some())
        {
            return Err(Error::InvalidModel(
                "SP predictor carries exactly one model and no nuisances".into(),
            ));
        }
        Ok(())
    }

    /// Stricter check for predictors that leave the process: two-stage
    /// predictors must carry their fitted nuisances, so oracle-built
    /// diagnostics never ship.
    pub fn validate_for_export(&self) -> Result<()> {
        self.validate()?;
        let missing = match self.learner {
            Learner::Sp => false,
            Learner::Ra => self.nuisance_mu.is_none(),
            Learner::Dr => self.nuisance_mu.is_none() || self.nuisance_pi.is_none(),
        };
        if missing {
            return Err(Error::InvalidModel(format!(
                "{} predictor is missing fitted nuisance models and cannot be exported",
                self.learner.as_str()
            )));
        }
        Ok(())
    }
}

/// Aggregate the fold models' outputs at `x`: arithmetic mean by default,
/// or the plain sum when requested.
pub fn predict(p: &FittedPredictor, x: &[f64]) -> Result<f64> {
    if p.fold_models.is_empty() {
        return Err(Error::InvalidModel("predictor has no fold models".into()));
    }
    let mut total = 0.0;
    for m in &p.fold_models {
        total += crate::regress::predict_linear(m, x)?;
    }
    Ok(match p.aggregate {
        Aggregate::Sum => total,
        Aggregate::Mean => total / p.fold_models.len() as f64,
    })
}
