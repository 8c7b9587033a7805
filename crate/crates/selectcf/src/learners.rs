//! Counterfactual learners: the desired-treatment-only baseline, label
//! estimation for dual-treatment samples, and the two-stage
//! regression-adjustment and doubly-robust learners with cross-fitting.

use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{
    Aggregate, FeatureMode, FittedPredictor, GenConfig, Learner, LinearModel, LogitModel, Study,
    StudyView, Treatment,
};
use crate::regress::{
    self, fit_least_squares, fit_logistic, predict_linear, predict_proba, DesignMatrix,
    LogisticOptions,
};
use crate::rng;
use crate::synth;

/// Shared fit options for every learner stage.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub ridge_lambda: f64,
    pub logistic: LogisticOptions,
    pub aggregate: Aggregate,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ridge_lambda: regress::DEFAULT_RIDGE,
            logistic: LogisticOptions::default(),
            aggregate: Aggregate::Mean,
        }
    }
}

/// Cross-fitting plan: training indices dealt into `k` folds, stratified by
/// treatment so each fold carries mass from every class present.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPlan {
    /// Deterministic function of (seed, the view's sample indices and their
    /// treatments): per class, indices are shuffled and dealt round-robin.
    pub fn stratified(view: &StudyView<'_>, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::FoldPlan(format!("fold count must be >= 2, got {k}")));
        }
        if view.len() < k {
            return Err(Error::FoldPlan(format!(
                "{} samples cannot fill {k} folds",
                view.len()
            )));
        }
        let mut folds = vec![Vec::new(); k];
        for (class_idx, t) in [Treatment::A1, Treatment::A2, Treatment::A3]
            .iter()
            .enumerate()
        {
            let mut idx = view.with_treatment(*t);
            idx.sort_unstable();
            let mut r = rng::stream(seed, &[rng::FOLDS, class_idx as u64]);
            idx.shuffle(&mut r);
            for (pos, i) in idx.into_iter().enumerate() {
                folds[pos % k].push(i);
            }
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        Ok(FoldPlan { k, folds, seed })
    }

    #[cfg(test)]
    fn fold_with_treatment(&self, fold: usize, study: &Study, t: Treatment) -> Vec<usize> {
        self.folds[fold]
            .iter()
            .copied()
            .filter(|&i| study.samples[i].t == t)
            .collect()
    }
}

pub type NuisanceFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Overrides for the nuisance stages, used by diagnostic and oracle modes.
/// A present hook replaces the corresponding fitted model everywhere.
#[derive(Clone, Default)]
pub struct OracleHooks {
    pub mu: Option<NuisanceFn>,
    pub pi: Option<NuisanceFn>,
}

impl OracleHooks {
    pub fn none() -> Self {
        OracleHooks::default()
    }

    /// Exact outcome regression from the generator formulas.
    pub fn with_true_mu(mut self, config: &GenConfig) -> Self {
        let c = config.clone();
        self.mu = Some(Arc::new(move |x, z| synth::true_mu_a1(x, z, &c)));
        self
    }

    /// Exact conditional propensity of the dual treatment among flagged
    /// cases, clipped like a fitted model would be.
    pub fn with_true_pi(mut self, config: &GenConfig, clip_epsilon: f64) -> Self {
        let c = config.clone();
        self.pi = Some(Arc::new(move |x, z| {
            (1.0 - synth::true_propensity(x, z, &c)).clamp(clip_epsilon, 1.0 - clip_epsilon)
        }));
        self
    }

    /// Deliberately corrupted outcome nuisance (identically zero), for
    /// robustness probes.
    pub fn with_zero_mu(mut self) -> Self {
        self.mu = Some(Arc::new(|_, _| 0.0));
        self
    }
}

impl std::fmt::Debug for OracleHooks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OracleHooks")
            .field("mu", &self.mu.is_some())
            .field("pi", &self.pi.is_some())
            .finish()
    }
}

/// How outcome labels for dual-treatment samples were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Two-regression estimate with a treatment-effect adjustment.
    Estimated,
    /// Observed dual-treatment outcomes, unadjusted.
    Raw,
    /// Sealed potential outcomes from the truth records.
    Oracle,
}

/// Desired-treatment outcome labels for every dual-treatment sample of a
/// study, index-aligned with the study's samples.
#[derive(Debug, Clone)]
pub struct DualLabels {
    pub mode: LabelMode,
    values: Vec<Option<f64>>,
}

impl DualLabels {
    pub fn get(&self, index: usize) -> Option<f64> {
        self.values[index]
    }

    pub fn require(&self, index: usize) -> Result<f64> {
        self.values[index].ok_or(Error::MissingLabel { index })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Observed outcomes as labels (the no-adjustment bypass).
    pub fn raw(study: &Study) -> Self {
        let values = study
            .samples
            .iter()
            .map(|s| {
                if s.t == Treatment::A3 {
                    Some(s.y)
                } else {
                    None
                }
            })
            .collect();
        DualLabels {
            mode: LabelMode::Raw,
            values,
        }
    }

    /// Sealed potential outcomes as labels (diagnostics only).
    pub fn oracle(study: &Study) -> Self {
        let values = study
            .samples
            .iter()
            .zip(&study.truth)
            .map(|(s, t)| {
                if s.t == Treatment::A3 {
                    Some(t.y_a1)
                } else {
                    None
                }
            })
            .collect();
        DualLabels {
            mode: LabelMode::Oracle,
            values,
        }
    }
}

fn xz_features(x: &[f64], z: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(x.len() + z.len());
    f.extend_from_slice(x);
    f.extend_from_slice(z);
    f
}

/// Estimate desired-treatment outcome labels for dual-treatment samples.
///
/// Step 1 fits the desired-treatment outcome regression on the training
/// view's observed confounders, pooled across locations. Step 2 estimates the
/// per-sample treatment-effect adjustment: the discrepancy between that
/// regression and the observed dual-treatment outcomes is regressed on
/// [x, z, z^2] over the training dual-treatment samples. The adjustment is
/// applied with the z-linear block frozen at its training mean: the hidden
/// confounders' linear effects belong to the outcome signal the downstream
/// nuisance must learn from the labels, while freezing (rather than dropping)
/// that block keeps the fit's calibration level, so the mean adjustment over
/// the training dual-treatment samples equals the mean discrepancy. Labels
/// are produced for every dual-treatment sample of the study; other samples
/// are untouched.
pub fn estimate_dual_labels(train: &StudyView<'_>, options: &FitOptions) -> Result<DualLabels> {
    let study = train.study;
    let d = study.dim();
    let a1_train = train.with_treatment(Treatment::A1);
    if a1_train.is_empty() {
        return Err(Error::DegenerateStudy(
            "no desired-treatment samples to fit labels from".into(),
        ));
    }

    let mut base = DesignMatrix::new(d);
    for &i in &a1_train {
        base.push_row(&study.samples[i].x, study.samples[i].y)?;
    }
    let outcome_fit = fit_least_squares(&base, options.ridge_lambda, FeatureMode::XOnly)?;

    let any_dual = study.samples.iter().any(|s| s.t == Treatment::A3);
    if !any_dual {
        return Ok(DualLabels {
            mode: LabelMode::Estimated,
            values: vec![None; study.len()],
        });
    }
    let a3_train = train.with_treatment(Treatment::A3);
    if a3_train.is_empty() {
        return Err(Error::DegenerateStudy(
            "study has dual-treatment samples but the training view has none".into(),
        ));
    }

    // discrepancy regression over [x, z, z^2]
    let mut adj = DesignMatrix::new(3 * d);
    let mut z_mean = vec![0.0; d];
    for &i in &a3_train {
        let s = &study.samples[i];
        let z =
            s.z.as_ref()
                .expect("dual-treatment samples carry hidden confounders");
        for (m, &zj) in z_mean.iter_mut().zip(z) {
            *m += zj;
        }
        let mut feats = xz_features(&s.x, z);
        feats.extend(z.iter().map(|v| v * v));
        let target = predict_linear(&outcome_fit, &s.x)? - s.y;
        adj.push_row(&feats, target)?;
    }
    for m in &mut z_mean {
        *m /= a3_train.len() as f64;
    }
    let adj_fit = fit_least_squares(&adj, options.ridge_lambda, FeatureMode::XAndZ)?;

    let mut values = vec![None; study.len()];
    for (i, s) in study.samples.iter().enumerate() {
        if s.t != Treatment::A3 {
            continue;
        }
        let z =
            s.z.as_ref()
                .expect("dual-treatment samples carry hidden confounders");
        let mut adjustment = adj_fit.intercept;
        for (j, &xj) in s.x.iter().enumerate() {
            adjustment += adj_fit.coefficients[j] * xj;
        }
        for (j, zbar) in z_mean.iter().enumerate() {
            adjustment += adj_fit.coefficients[d + j] * zbar;
        }
        for (j, &zj) in z.iter().enumerate() {
            adjustment += adj_fit.coefficients[2 * d + j] * zj * zj;
        }
        values[i] = Some(s.y + adjustment);
    }
    Ok(DualLabels {
        mode: LabelMode::Estimated,
        values,
    })
}

/// Baseline: least squares of observed outcomes on observed confounders over
/// the desired-treatment training samples only.
pub fn fit_sp(train: &StudyView<'_>, options: &FitOptions) -> Result<FittedPredictor> {
    let study = train.study;
    let a1 = train.with_treatment(Treatment::A1);
    if a1.is_empty() {
        return Err(Error::DegenerateStudy(
            "no desired-treatment training samples".into(),
        ));
    }
    let mut design = DesignMatrix::new(study.dim());
    for &i in &a1 {
        design.push_row(&study.samples[i].x, study.samples[i].y)?;
    }
    let model = fit_least_squares(&design, options.ridge_lambda, FeatureMode::XOnly)?;
    Ok(FittedPredictor {
        learner: Learner::Sp,
        fold_models: vec![model],
        nuisance_mu: None,
        nuisance_pi: None,
        aggregate: options.aggregate,
    })
}

enum MuSource<'h> {
    Fitted(LinearModel),
    Hook(&'h NuisanceFn),
}

impl MuSource<'_> {
    fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        match self {
            MuSource::Fitted(m) => predict_linear(m, &xz_features(x, z)),
            MuSource::Hook(f) => Ok(f(x, z)),
        }
    }
}

enum PiSource<'h> {
    Fitted(LogitModel),
    Hook(&'h NuisanceFn),
}

impl PiSource<'_> {
    fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        match self {
            PiSource::Fitted(m) => predict_proba(m, &xz_features(x, z)),
            PiSource::Hook(f) => Ok(f(x, z)),
        }
    }
}

/// Fit the outcome nuisance on one fold's dual-treatment samples: labels
/// regressed on the full confounder set.
fn fit_mu_on_fold(
    study: &Study,
    fold: &[usize],
    labels: &DualLabels,
    options: &FitOptions,
) -> Result<LinearModel> {
    let mut design = DesignMatrix::new(2 * study.dim());
    for &i in fold {
        let s = &study.samples[i];
        if s.t != Treatment::A3 {
            continue;
        }
        let z =
            s.z.as_ref()
                .expect("dual-treatment samples carry hidden confounders");
        design.push_row(&xz_features(&s.x, z), labels.require(i)?)?;
    }
    if design.rows == 0 {
        return Err(Error::FoldPlan(
            "a nuisance fold has no dual-treatment samples".into(),
        ));
    }
    fit_least_squares(&design, options.ridge_lambda, FeatureMode::XAndZ)
}

/// Fit the conditional propensity of the dual treatment among samples that
/// did not receive the desired treatment, on one fold.
fn fit_pi_on_fold(study: &Study, fold: &[usize], options: &FitOptions) -> Result<LogitModel> {
    let mut design = DesignMatrix::new(2 * study.dim());
    for &i in fold {
        let s = &study.samples[i];
        if s.t == Treatment::A1 {
            continue;
        }
        let z =
            s.z.as_ref()
                .expect("non-desired samples carry hidden confounders");
        let target = if s.t == Treatment::A3 { 1.0 } else { 0.0 };
        design.push_row(&xz_features(&s.x, z), target)?;
    }
    if design.rows == 0 {
        return Err(Error::DegenerateLabels(
            "a propensity fold has no flagged samples".into(),
        ));
    }
    fit_logistic(&design, &options.logistic)
}

/// Regression-adjustment pseudo-outcome: the observed outcome under the
/// desired treatment, the outcome-nuisance prediction otherwise.
fn ra_pseudo_outcome(t: Treatment, y: f64, mu_hat: f64) -> f64 {
    match t {
        Treatment::A1 => y,
        _ => mu_hat,
    }
}

/// Doubly robust pseudo-outcome. The inverse-propensity correction fires only
/// for dual-treatment samples, so the alternative treatment contributes the
/// outcome-nuisance prediction exactly.
pub fn dr_pseudo_outcome(
    t: Treatment,
    y: f64,
    label: Option<f64>,
    mu_hat: f64,
    pi_hat: f64,
) -> Result<f64> {
    Ok(match t {
        Treatment::A1 => y,
        Treatment::A2 => mu_hat,
        Treatment::A3 => {
            let label = label.ok_or(Error::MissingLabel { index: usize::MAX })?;
            (label - mu_hat) / pi_hat + mu_hat
        }
    })
}

fn fit_target_on_fold(
    study: &Study,
    fold: &[usize],
    pseudo: impl Fn(usize) -> Result<f64>,
    options: &FitOptions,
) -> Result<LinearModel> {
    let mut design = DesignMatrix::new(study.dim());
    for &i in fold {
        design.push_row(&study.samples[i].x, pseudo(i)?)?;
    }
    if design.rows == 0 {
        return Err(Error::FoldPlan("a target fold is empty".into()));
    }
    fit_least_squares(&design, options.ridge_lambda, FeatureMode::XOnly)
}

/// Two-stage regression-adjustment learner over a 2-fold plan. For each fold
/// pair, the outcome nuisance is fit on one fold's dual-treatment samples and
/// the target regression on the other fold's pseudo-outcomes.
pub fn fit_ra(
    train: &StudyView<'_>,
    labels: &DualLabels,
    plan: &FoldPlan,
    hooks: &OracleHooks,
    options: &FitOptions,
) -> Result<FittedPredictor> {
    if plan.k != 2 {
        return Err(Error::FoldPlan(format!(
            "regression adjustment uses 2 folds, got {}",
            plan.k
        )));
    }
    let study = train.study;
    let mut fold_models = Vec::with_capacity(2);
    let mut nuisance_mu = Vec::new();
    for (i, j) in [(0usize, 1usize), (1, 0)] {
        let mu = match &hooks.mu {
            Some(f) => MuSource::Hook(f),
            None => {
                let m = fit_mu_on_fold(study, &plan.folds[i], labels, options)?;
                nuisance_mu.push(m.clone());
                MuSource::Fitted(m)
            }
        };
        let model = fit_target_on_fold(
            study,
            &plan.folds[j],
            |idx| {
                let s = &study.samples[idx];
                let mu_hat = match s.t {
                    Treatment::A1 => 0.0,
                    _ => mu.eval(&s.x, s.z.as_ref().expect("hidden confounders present"))?,
                };
                Ok(ra_pseudo_outcome(s.t, s.y, mu_hat))
            },
            options,
        )?;
        fold_models.push(model);
    }
    Ok(FittedPredictor {
        learner: Learner::Ra,
        fold_models,
        nuisance_mu: (!nuisance_mu.is_empty()).then_some(nuisance_mu),
        nuisance_pi: None,
        aggregate: options.aggregate,
    })
}

/// Doubly robust learner over a 3-fold plan. Each rotation fits the outcome
/// nuisance on one fold, the conditional propensity on a second, and the
/// target regression on the third; no sample's pseudo-outcome depends on a
/// nuisance trained on its own fold.
pub fn fit_dr(
    train: &StudyView<'_>,
    labels: &DualLabels,
    plan: &FoldPlan,
    hooks: &OracleHooks,
    options: &FitOptions,
) -> Result<FittedPredictor> {
    if plan.k != 3 {
        return Err(Error::FoldPlan(format!(
            "doubly robust uses 3 folds, got {}",
            plan.k
        )));
    }
    let study = train.study;
    let mut fold_models = Vec::with_capacity(3);
    let mut nuisance_mu = Vec::new();
    let mut nuisance_pi = Vec::new();
    for (i, j, k) in [(0usize, 1usize, 2usize), (2, 0, 1), (1, 2, 0)] {
        debug_assert!(
            i != k && j != k,
            "nuisance folds must differ from the target fold"
        );
        let mu = match &hooks.mu {
            Some(f) => MuSource::Hook(f),
            None => {
                let m = fit_mu_on_fold(study, &plan.folds[i], labels, options)?;
                nuisance_mu.push(m.clone());
                MuSource::Fitted(m)
            }
        };
        let pi = match &hooks.pi {
            Some(f) => PiSource::Hook(f),
            None => {
                let m = fit_pi_on_fold(study, &plan.folds[j], options)?;
                nuisance_pi.push(m.clone());
                PiSource::Fitted(m)
            }
        };
        let model = fit_target_on_fold(
            study,
            &plan.folds[k],
            |idx| {
                let s = &study.samples[idx];
                match s.t {
                    Treatment::A1 => dr_pseudo_outcome(s.t, s.y, None, 0.0, 1.0),
                    _ => {
                        let z = s.z.as_ref().expect("hidden confounders present");
                        let mu_hat = mu.eval(&s.x, z)?;
                        let pi_hat = pi.eval(&s.x, z)?;
                        let label = match s.t {
                            Treatment::A3 => Some(labels.require(idx)?),
                            _ => None,
                        };
                        dr_pseudo_outcome(s.t, s.y, label, mu_hat, pi_hat)
                    }
                }
            },
            options,
        )?;
        fold_models.push(model);
    }
    Ok(FittedPredictor {
        learner: Learner::Dr,
        fold_models,
        nuisance_mu: (!nuisance_mu.is_empty()).then_some(nuisance_mu),
        nuisance_pi: (!nuisance_pi.is_empty()).then_some(nuisance_pi),
        aggregate: options.aggregate,
    })
}

/// Learner variants the harness exposes, including diagnostic modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LearnerKind {
    Sp,
    Ra,
    Dr,
    /// Regression adjustment with oracle labels and oracle outcome nuisance.
    RaOracle,
    /// Doubly robust with oracle labels and both oracle nuisances.
    DrOracle,
    /// Doubly robust fed raw observed dual-treatment outcomes as labels.
    DrNoLabelEst,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Sp => "SP",
            LearnerKind::Ra => "RA",
            LearnerKind::Dr => "DR",
            LearnerKind::RaOracle => "RA_ORACLE",
            LearnerKind::DrOracle => "DR_ORACLE",
            LearnerKind::DrNoLabelEst => "DR_NO_LABEL_EST",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SP" => Ok(LearnerKind::Sp),
            "RA" => Ok(LearnerKind::Ra),
            "DR" => Ok(LearnerKind::Dr),
            "RA_ORACLE" => Ok(LearnerKind::RaOracle),
            "DR_ORACLE" => Ok(LearnerKind::DrOracle),
            "DR_NO_LABEL_EST" => Ok(LearnerKind::DrNoLabelEst),
            other => Err(Error::Parse(format!("unknown learner '{other}'"))),
        }
    }

    /// Stable numeric identity used for seed derivation.
    pub fn id(self) -> u64 {
        match self {
            LearnerKind::Sp => 0,
            LearnerKind::Ra => 1,
            LearnerKind::Dr => 2,
            LearnerKind::RaOracle => 3,
            LearnerKind::DrOracle => 4,
            LearnerKind::DrNoLabelEst => 5,
        }
    }

    pub fn all() -> [LearnerKind; 6] {
        [
            LearnerKind::Sp,
            LearnerKind::Ra,
            LearnerKind::Dr,
            LearnerKind::RaOracle,
            LearnerKind::DrOracle,
            LearnerKind::DrNoLabelEst,
        ]
    }

    pub fn uses_oracle(self) -> bool {
        matches!(self, LearnerKind::RaOracle | LearnerKind::DrOracle)
    }
}

/// Fit one learner variant end to end: labels, fold plan, hooks, fit.
/// Returns the predictor together with the labels it consumed so evaluation
/// can reuse them.
pub fn fit_learner(
    kind: LearnerKind,
    train: &StudyView<'_>,
    seed: u64,
    options: &FitOptions,
) -> Result<(FittedPredictor, DualLabels)> {
    let study = train.study;
    let labels = match kind {
        LearnerKind::Sp | LearnerKind::Ra | LearnerKind::Dr => {
            estimate_dual_labels(train, options)?
        }
        LearnerKind::DrNoLabelEst => DualLabels::raw(study),
        LearnerKind::RaOracle | LearnerKind::DrOracle => DualLabels::oracle(study),
    };
    let hooks = match kind {
        LearnerKind::RaOracle => OracleHooks::none().with_true_mu(&study.config),
        LearnerKind::DrOracle => OracleHooks::none()
            .with_true_mu(&study.config)
            .with_true_pi(&study.config, options.logistic.clip_epsilon),
        _ => OracleHooks::none(),
    };
    let predictor = match kind {
        LearnerKind::Sp => fit_sp(train, options)?,
        LearnerKind::Ra | LearnerKind::RaOracle => {
            let plan = FoldPlan::stratified(train, 2, rng::derive_seed(seed, &[rng::FOLDS, 2]))?;
            fit_ra(train, &labels, &plan, &hooks, options)?
        }
        LearnerKind::Dr | LearnerKind::DrOracle | LearnerKind::DrNoLabelEst => {
            let plan = FoldPlan::stratified(train, 3, rng::derive_seed(seed, &[rng::FOLDS, 3]))?;
            fit_dr(train, &labels, &plan, &hooks, options)?
        }
    };
    Ok((predictor, labels))
}

/// Conditional propensity at a point, averaged over the predictor's
/// cross-fitted propensity models.
pub fn conditional_propensity(p: &FittedPredictor, x: &[f64], z: &[f64]) -> Result<f64> {
    let models = p
        .nuisance_pi
        .as_ref()
        .ok_or_else(|| Error::InvalidModel("predictor carries no propensity nuisances".into()))?;
    if models.is_empty() {
        return Err(Error::InvalidModel(
            "predictor carries no propensity nuisances".into(),
        ));
    }
    let feats = xz_features(x, z);
    let mut total = 0.0;
    for m in models {
        total += predict_proba(m, &feats)?;
    }
    Ok(total / models.len() as f64)
}
