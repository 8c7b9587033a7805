//! Evaluation: ground-truth mean squared error, the doubly-robust error
//! estimator usable without sealed truth, per-location acceptance and failure
//! rates, the risk-ranked policy swap, and held-out-location evaluation.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::learners::{
    conditional_propensity, estimate_dual_labels, fit_learner, DualLabels, FitOptions, LearnerKind,
};
use crate::model::{predict, FeatureMode, FittedPredictor, LinearModel, StudyView, Treatment};
use crate::regress::{fit_least_squares, predict_linear, DesignMatrix};

/// Mean squared error of the predictor against the sealed target regression.
pub fn mse_vs_truth(p: &FittedPredictor, view: &StudyView<'_>) -> Result<f64> {
    if view.is_empty() {
        return Err(Error::EmptyEval("mse_vs_truth over an empty view".into()));
    }
    let mut total = 0.0;
    for (i, s) in view.iter() {
        let err = view.study.truth[i].nu - predict(p, &s.x)?;
        total += err * err;
    }
    Ok(total / view.len() as f64)
}

/// Truth-side counterfactual residual: mean of (y_a1 - prediction)^2 using
/// the sealed potential outcomes.
pub fn counterfactual_residual_mse(p: &FittedPredictor, view: &StudyView<'_>) -> Result<f64> {
    if view.is_empty() {
        return Err(Error::EmptyEval(
            "counterfactual residual over an empty view".into(),
        ));
    }
    let mut total = 0.0;
    for (i, s) in view.iter() {
        let err = view.study.truth[i].y_a1 - predict(p, &s.x)?;
        total += err * err;
    }
    Ok(total / view.len() as f64)
}

/// Fit the squared-residual regressor for the doubly-robust error estimator:
/// (label - prediction)^2 regressed on the full confounder set over the
/// view's dual-treatment samples.
pub fn fit_error_regressor(
    view: &StudyView<'_>,
    labels: &DualLabels,
    p: &FittedPredictor,
    options: &FitOptions,
) -> Result<LinearModel> {
    let mut design = DesignMatrix::new(2 * view.study.dim());
    for (i, s) in view.iter() {
        if s.t != Treatment::A3 {
            continue;
        }
        let z =
            s.z.as_ref()
                .expect("dual-treatment samples carry hidden confounders");
        let mut feats = s.x.clone();
        feats.extend_from_slice(z);
        let resid = labels.require(i)? - predict(p, &s.x)?;
        design.push_row(&feats, resid * resid)?;
    }
    if design.rows == 0 {
        return Err(Error::EmptyEval(
            "no dual-treatment samples to fit the error regressor on".into(),
        ));
    }
    fit_least_squares(&design, options.ridge_lambda, FeatureMode::XAndZ)
}

/// Doubly-robust estimate of the counterfactual mean squared error over a
/// test view, from labels and two nuisance functions of the sample index and
/// its (x, z): the squared-error regressor (floored at zero) and the
/// conditional propensity.
pub fn dr_mse_estimate(
    p: &FittedPredictor,
    test: &StudyView<'_>,
    labels: &DualLabels,
    eta: impl Fn(usize, &[f64], &[f64]) -> f64,
    pi: impl Fn(usize, &[f64], &[f64]) -> f64,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyEval(
            "dr_mse_estimate over an empty view".into(),
        ));
    }
    let mut total = 0.0;
    for (i, s) in test.iter() {
        let pred = predict(p, &s.x)?;
        match s.t {
            Treatment::A1 => {
                let r = s.y - pred;
                total += r * r;
            }
            _ => {
                let z = s.z.as_ref().expect("hidden confounders present");
                let eta_hat = eta(i, &s.x, z).max(0.0);
                if s.t == Treatment::A3 {
                    let r = labels.require(i)? - pred;
                    let pi_hat = pi(i, &s.x, z);
                    total += (r * r - eta_hat) / pi_hat + eta_hat;
                } else {
                    total += eta_hat;
                }
            }
        }
    }
    Ok(total / test.len() as f64)
}

/// `dr_mse_estimate` wired to fitted nuisances: the error regressor fit on
/// the training view and the predictor's own cross-fitted propensity models.
pub fn dr_mse_estimate_fitted(
    p: &FittedPredictor,
    train: &StudyView<'_>,
    test: &StudyView<'_>,
    labels: &DualLabels,
    options: &FitOptions,
) -> Result<f64> {
    let eta_model = fit_error_regressor(train, labels, p, options)?;
    let eta = |_: usize, x: &[f64], z: &[f64]| {
        let mut feats = x.to_vec();
        feats.extend_from_slice(z);
        predict_linear(&eta_model, &feats).unwrap_or(0.0)
    };
    let pi = |_: usize, x: &[f64], z: &[f64]| conditional_propensity(p, x, z).unwrap_or(0.5);
    dr_mse_estimate(p, test, labels, eta, pi)
}

/// Per-location acceptance and failure rates.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationStats {
    pub location: usize,
    /// Fraction of the location's samples that received the desired treatment.
    pub ar_emp: f64,
    /// Fraction of the location's samples that received the desired treatment
    /// and had an adverse outcome.
    pub fr_emp: f64,
    pub n: usize,
}

/// Adverse-outcome threshold: the given quantile of pooled desired-treatment
/// outcomes (linear interpolation between order statistics).
pub fn adverse_threshold(view: &StudyView<'_>, quantile: f64) -> Result<f64> {
    let mut ys: Vec<f64> = view
        .iter()
        .filter(|(_, s)| s.t == Treatment::A1)
        .map(|(_, s)| s.y)
        .collect();
    if ys.is_empty() {
        return Err(Error::EmptyEval(
            "no desired-treatment outcomes to set a threshold from".into(),
        ));
    }
    ys.sort_by(|a, b| a.partial_cmp(b).expect("outcomes are finite"));
    let q = quantile.clamp(0.0, 1.0) * (ys.len() - 1) as f64;
    let lo = q.floor() as usize;
    let hi = q.ceil() as usize;
    let w = q - lo as f64;
    Ok(ys[lo] * (1.0 - w) + ys[hi] * w)
}

pub fn location_stats(view: &StudyView<'_>, adverse_above: f64) -> Vec<LocationStats> {
    let locs: BTreeSet<usize> = view.iter().map(|(_, s)| s.location).collect();
    locs.into_iter()
        .map(|location| {
            let mut n = 0usize;
            let mut accepted = 0usize;
            let mut failed = 0usize;
            for (_, s) in view.iter() {
                if s.location != location {
                    continue;
                }
                n += 1;
                if s.t == Treatment::A1 {
                    accepted += 1;
                    if s.y > adverse_above {
                        failed += 1;
                    }
                }
            }
            LocationStats {
                location,
                ar_emp: accepted as f64 / n as f64,
                fr_emp: failed as f64 / n as f64,
                n,
            }
        })
        .collect()
}

/// One location's failure rate after a risk-ranked reassignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapOutcome {
    pub location: usize,
    pub fr_before: f64,
    pub fr_after: f64,
    pub selected: usize,
}

/// Policy swap with an arbitrary per-sample risk score. Per location, the
/// desired-treatment and dual-treatment samples are pooled and the
/// lowest-risk samples are selected, exactly as many as historically received
/// the desired treatment; failure rates use observed outcomes for
/// desired-treatment members and labels for dual-treatment members. Ties
/// break by sample index.
pub fn policy_swap_fr_with_scores(
    scores: impl Fn(usize) -> Result<f64>,
    view: &StudyView<'_>,
    labels: &DualLabels,
    adverse_above: f64,
) -> Result<Vec<SwapOutcome>> {
    let locs: BTreeSet<usize> = view.iter().map(|(_, s)| s.location).collect();
    let mut out = Vec::with_capacity(locs.len());
    for location in locs {
        let mut n = 0usize;
        let mut pool: Vec<usize> = Vec::new();
        let mut accepted = 0usize;
        let mut failed_before = 0usize;
        for (i, s) in view.iter() {
            if s.location != location {
                continue;
            }
            n += 1;
            match s.t {
                Treatment::A1 => {
                    accepted += 1;
                    pool.push(i);
                    if s.y > adverse_above {
                        failed_before += 1;
                    }
                }
                Treatment::A3 => pool.push(i),
                Treatment::A2 => {}
            }
        }
        let mut ranked: Vec<(usize, f64)> = pool
            .into_iter()
            .map(|i| Ok((i, scores(i)?)))
            .collect::<Result<_>>()?;
        ranked.sort_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .expect("scores are finite")
                .then(a.0.cmp(&b.0))
        });
        let mut failed_after = 0usize;
        for &(i, _) in ranked.iter().take(accepted) {
            let s = &view.study.samples[i];
            let outcome = match s.t {
                Treatment::A1 => s.y,
                _ => labels.require(i)?,
            };
            if outcome > adverse_above {
                failed_after += 1;
            }
        }
        out.push(SwapOutcome {
            location,
            fr_before: failed_before as f64 / n as f64,
            fr_after: failed_after as f64 / n as f64,
            selected: accepted,
        });
    }
    Ok(out)
}

/// Policy swap ranked by the predictor's risk scores.
pub fn policy_swap_fr(
    p: &FittedPredictor,
    view: &StudyView<'_>,
    labels: &DualLabels,
    adverse_above: f64,
) -> Result<Vec<SwapOutcome>> {
    policy_swap_fr_with_scores(
        |i| predict(p, &view.study.samples[i].x),
        view,
        labels,
        adverse_above,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutReport {
    /// Mean squared residual (y - prediction)^2 over the held-out locations'
    /// desired-treatment samples.
    pub residual_mse: f64,
    /// Ground-truth MSE on the same samples, for synthetic diagnostics.
    pub truth_mse: f64,
    pub n: usize,
}

/// Train the chosen learner with the given locations excluded from every
/// stage, then evaluate on their desired-treatment samples.
pub fn holdout_location_mse(
    view: &StudyView<'_>,
    kind: LearnerKind,
    holdout: &BTreeSet<usize>,
    seed: u64,
    options: &FitOptions,
) -> Result<HoldoutReport> {
    let train = view.excluding_locations(holdout);
    if train.is_empty() {
        return Err(Error::EmptyEval("holdout excludes every location".into()));
    }
    let eval_view = view.only_locations(holdout);
    let a1_idx: Vec<usize> = eval_view.with_treatment(Treatment::A1);
    if a1_idx.is_empty() {
        return Err(Error::EmptyEval(
            "holdout has no desired-treatment samples".into(),
        ));
    }
    let (predictor, _) = fit_learner(kind, &train, seed, options)?;
    let mut resid = 0.0;
    let mut truth = 0.0;
    for &i in &a1_idx {
        let s = &view.study.samples[i];
        let pred = predict(&predictor, &s.x)?;
        resid += (s.y - pred) * (s.y - pred);
        let t = view.study.truth[i].nu - pred;
        truth += t * t;
    }
    let n = a1_idx.len();
    Ok(HoldoutReport {
        residual_mse: resid / n as f64,
        truth_mse: truth / n as f64,
        n,
    })
}

/// Labels for evaluation: reuse the learner's own label pipeline on the
/// training view so test-side dual-treatment samples get scored labels.
pub fn eval_labels(
    train: &StudyView<'_>,
    kind: LearnerKind,
    options: &FitOptions,
) -> Result<DualLabels> {
    match kind {
        LearnerKind::DrNoLabelEst => Ok(DualLabels::raw(train.study)),
        LearnerKind::RaOracle | LearnerKind::DrOracle => Ok(DualLabels::oracle(train.study)),
        _ => estimate_dual_labels(train, options),
    }
}
