//! Numerical core: ridge-penalized least squares via the normal equations and
//! logistic regression via iteratively reweighted least squares.
//!
//! The intercept is always included and never penalized. Features are used
//! raw; the generator produces unit-scale inputs.

use crate::error::{Error, Result};
use crate::model::{FeatureMode, LinearModel, LogitModel};

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Row-major feature matrix with aligned regression targets. No intercept
/// column; the solvers append it.
#[derive(Debug, Clone, Default)]
pub struct DesignMatrix {
    pub rows: usize,
    pub cols: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(cols: usize) -> Self {
        DesignMatrix {
            rows: 0,
            cols,
            features: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push_row(&mut self, features: &[f64], target: f64) -> Result<()> {
        if features.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: features.len(),
            });
        }
        self.features.extend_from_slice(features);
        self.targets.push(target);
        self.rows += 1;
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.cols..(i + 1) * self.cols]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

/// Solve the symmetric positive-definite system `A w = b` by Cholesky
/// factorization, in place. Fails when a pivot collapses, which is how
/// rank deficiency at zero ridge surfaces.
fn solve_spd(a: &mut [f64], b: &mut [f64], p: usize) -> Result<()> {
    debug_assert_eq!(a.len(), p * p);
    debug_assert_eq!(b.len(), p);
    let max_diag = (0..p).map(|i| a[i * p + i].abs()).fold(0.0_f64, f64::max);
    let tol = max_diag * 1e-12 + f64::MIN_POSITIVE;
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if d <= tol {
            return Err(Error::RankDeficient);
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in (j + 1)..p {
            let mut v = a[i * p + j];
            for k in 0..j {
                v -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = v / d;
        }
    }
    // forward then backward substitution
    for i in 0..p {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * p + k] * b[k];
        }
        b[i] = v / a[i * p + i];
    }
    for i in (0..p).rev() {
        let mut v = b[i];
        for k in (i + 1)..p {
            v -= a[k * p + i] * b[k];
        }
        b[i] = v / a[i * p + i];
    }
    Ok(())
}

/// Accumulate the intercept-augmented normal equations `A = [1 X]'W[1 X]`,
/// `b = [1 X]'W t` with per-row weights; `weights = None` means all ones.
fn normal_equations(
    design: &DesignMatrix,
    weights: Option<&[f64]>,
    targets: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let p = design.cols + 1;
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    for r in 0..design.rows {
        let row = design.row(r);
        let w = weights.map_or(1.0, |ws| ws[r]);
        let t = targets[r];
        a[0] += w;
        b[0] += w * t;
        for i in 0..design.cols {
            let wxi = w * row[i];
            a[i + 1] += wxi; // first column of A (intercept cross terms)
            b[i + 1] += wxi * t;
            let ai = (i + 1) * p;
            for j in i..design.cols {
                a[ai + j + 1] += wxi * row[j];
            }
        }
    }
    // only the upper triangle was accumulated; mirror it
    for i in 0..p {
        for j in (i + 1)..p {
            a[j * p + i] = a[i * p + j];
        }
    }
    (a, b)
}

/// Ridge-penalized least squares. Minimizes
/// `sum (y - beta.x - b)^2 + ridge_lambda * |beta|^2` with the intercept
/// unpenalized, solved through the normal equations.
pub fn fit_least_squares(
    design: &DesignMatrix,
    ridge_lambda: f64,
    feature_mode: FeatureMode,
) -> Result<LinearModel> {
    if design.rows == 0 {
        return Err(Error::EmptyEval(
            "least-squares fit needs at least one row".into(),
        ));
    }
    if ridge_lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "ridge_lambda must be >= 0, got {ridge_lambda}"
        )));
    }
    let p = design.cols + 1;
    let (mut a, mut b) = normal_equations(design, None, design.targets());
    for i in 1..p {
        a[i * p + i] += ridge_lambda;
    }
    solve_spd(&mut a, &mut b, p)?;
    Ok(LinearModel {
        coefficients: b[1..].to_vec(),
        intercept: b[0],
        feature_mode,
    })
}

#[derive(Debug, Clone)]
pub struct LogisticOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub ridge_lambda: f64,
    pub clip_epsilon: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            max_iter: 100,
            tol: 1e-8,
            ridge_lambda: DEFAULT_RIDGE,
            clip_epsilon: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticReport {
    pub converged: bool,
    pub iterations: usize,
    /// Penalized log-likelihood after each accepted step, starting from the
    /// zero coefficient vector.
    pub objective_trace: Vec<f64>,
}

pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn log1p_exp(u: f64) -> f64 {
    // ln(1 + e^u), stable for large |u|
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn penalized_loglik(design: &DesignMatrix, w: &[f64], ridge: f64) -> f64 {
    let mut ll = 0.0;
    for r in 0..design.rows {
        let row = design.row(r);
        let mut eta = w[0];
        for (j, &xj) in row.iter().enumerate() {
            eta += w[j + 1] * xj;
        }
        ll += design.target(r) * eta - log1p_exp(eta);
    }
    let penalty: f64 = w[1..].iter().map(|c| c * c).sum();
    ll - 0.5 * ridge * penalty
}

/// Logistic regression by IRLS with step halving, maximizing the
/// ridge-penalized Bernoulli log-likelihood. Reaching `max_iter` is reported
/// in the returned `LogisticReport`, not treated as an error.
pub fn fit_logistic_with_report(
    design: &DesignMatrix,
    options: &LogisticOptions,
) -> Result<(LogitModel, LogisticReport)> {
    if design.rows == 0 {
        return Err(Error::EmptyEval(
            "logistic fit needs at least one row".into(),
        ));
    }
    let (mut ones, mut zeros) = (0usize, 0usize);
    for &t in design.targets() {
        if t == 1.0 {
            ones += 1;
        } else if t == 0.0 {
            zeros += 1;
        } else {
            return Err(Error::DegenerateLabels(format!(
                "logistic targets must be 0 or 1, got {t}"
            )));
        }
    }
    if ones == 0 || zeros == 0 {
        return Err(Error::DegenerateLabels(
            "logistic targets contain a single class".into(),
        ));
    }

    let p = design.cols + 1;
    let mut w = vec![0.0; p];
    let mut objective = penalized_loglik(design, &w, options.ridge_lambda);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;

    let mut probs = vec![0.0; design.rows];
    let mut weights = vec![0.0; design.rows];
    let mut working = vec![0.0; design.rows];

    for iter in 0..options.max_iter {
        iterations = iter + 1;
        for r in 0..design.rows {
            let row = design.row(r);
            let mut eta = w[0];
            for (j, &xj) in row.iter().enumerate() {
                eta += w[j + 1] * xj;
            }
            let pr = sigmoid(eta);
            let var = (pr * (1.0 - pr)).max(1e-10);
            probs[r] = pr;
            weights[r] = var;
            working[r] = eta + (design.target(r) - pr) / var;
        }
        let (mut a, b) = normal_equations(design, Some(&weights), &working);
        for i in 1..p {
            a[i * p + i] += options.ridge_lambda;
        }
        let mut candidate = b.clone();
        {
            let mut a_copy = a.clone();
            solve_spd(&mut a_copy, &mut candidate, p)?;
        }

        // step halving keeps the penalized objective non-decreasing
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = w
                .iter()
                .zip(&candidate)
                .map(|(&old, &new)| old + step * (new - old))
                .collect();
            let trial_obj = penalized_loglik(design, &trial, options.ridge_lambda);
            if trial_obj >= objective - 1e-10 {
                let delta = w
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0_f64, f64::max);
                w = trial;
                objective = trial_obj;
                trace.push(objective);
                accepted = true;
                if delta < options.tol {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = true; // no ascent direction left at this scale
        }
        if converged {
            break;
        }
    }

    let model = LogitModel {
        coefficients: w[1..].to_vec(),
        intercept: w[0],
        clip_epsilon: options.clip_epsilon,
    };
    Ok((
        model,
        LogisticReport {
            converged,
            iterations,
            objective_trace: trace,
        },
    ))
}

pub fn fit_logistic(design: &DesignMatrix, options: &LogisticOptions) -> Result<LogitModel> {
    fit_logistic_with_report(design, options).map(|(m, _)| m)
}

pub fn predict_linear(model: &LinearModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: model.coefficients.len(),
            got: features.len(),
        });
    }
    let mut v = model.intercept;
    for (c, x) in model.coefficients.iter().zip(features) {
        v += c * x;
    }
    Ok(v)
}

pub fn predict_proba(model: &LogitModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: model.coefficients.len(),
            got: features.len(),
        });
    }
    let mut eta = model.intercept;
    for (c, x) in model.coefficients.iter().zip(features) {
        eta += c * x;
    }
    Ok(sigmoid(eta).clamp(model.clip_epsilon, 1.0 - model.clip_epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn design(rows: &[(&[f64], f64)]) -> DesignMatrix {
        let mut d = DesignMatrix::new(rows[0].0.len());
        for (x, y) in rows {
            d.push_row(x, *y).unwrap();
        }
        d
    }

    #[test]
    fn two_points_determine_a_line() {
        let d = design(&[(&[0.0], 1.0), (&[1.0], 3.0)]);
        let m = fit_least_squares(&d, 0.0, FeatureMode::XOnly).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-10);
        assert!((m.intercept - 1.0).abs() < 1e-10);
        assert!((predict_linear(&m, &[0.0]).unwrap() - 1.0).abs() < 1e-10);
        assert!((predict_linear(&m, &[1.0]).unwrap() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn residuals_orthogonal_to_features_at_zero_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = DesignMatrix::new(5);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y: f64 = rng.sample::<f64, _>(StandardNormal)
                + x.iter()
                    .enumerate()
                    .map(|(j, v)| (j as f64 - 2.0) * v)
                    .sum::<f64>();
            d.push_row(&x, y).unwrap();
        }
        let m = fit_least_squares(&d, 0.0, FeatureMode::XOnly).unwrap();
        let mut dots = vec![0.0; 6];
        for r in 0..d.rows {
            let res = d.target(r) - predict_linear(&m, d.row(r)).unwrap();
            dots[0] += res;
            for (j, &xj) in d.row(r).iter().enumerate() {
                dots[j + 1] += res * xj;
            }
        }
        for v in dots {
            assert!(v.abs() < 1e-8, "residual correlation {v}");
        }
    }

    #[test]
    fn constant_targets_give_intercept_only_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = DesignMatrix::new(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            d.push_row(&x, 2.5).unwrap();
        }
        let m = fit_least_squares(&d, 1e-4, FeatureMode::XOnly).unwrap();
        for c in &m.coefficients {
            assert!(c.abs() < 1e-9);
        }
        assert!((m.intercept - 2.5).abs() < 1e-9);
    }

    #[test]
    fn duplicate_columns_are_rank_deficient_at_zero_ridge() {
        let d = design(&[(&[1.0, 1.0], 0.5), (&[2.0, 2.0], 1.2), (&[3.0, 3.0], 1.4)]);
        assert!(matches!(
            fit_least_squares(&d, 0.0, FeatureMode::XOnly),
            Err(Error::RankDeficient)
        ));
        assert!(fit_least_squares(&d, 1e-6, FeatureMode::XOnly).is_ok());
    }

    #[test]
    fn penalized_gradient_vanishes_at_solution() {
        // analytic gradient at the fit, cross-checked by finite differences
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut d = DesignMatrix::new(4);
        for _ in 0..40 {
            let x: Vec<f64> = (0..4)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y: f64 = 1.0 + x[0] - 2.0 * x[3] + rng.sample::<f64, _>(StandardNormal);
            d.push_row(&x, y).unwrap();
        }
        let lambda = 0.5;
        let m = fit_least_squares(&d, lambda, FeatureMode::XOnly).unwrap();

        let objective = |coef: &[f64], b: f64| -> f64 {
            let mut s = 0.0;
            for r in 0..d.rows {
                let pred: f64 = b + d.row(r).iter().zip(coef).map(|(x, c)| x * c).sum::<f64>();
                s += (d.target(r) - pred).powi(2);
            }
            s + lambda * coef.iter().map(|c| c * c).sum::<f64>()
        };

        let mut grad = [0.0; 5];
        for r in 0..d.rows {
            let res = d.target(r) - predict_linear(&m, d.row(r)).unwrap();
            grad[0] += -2.0 * res;
            for (j, &xj) in d.row(r).iter().enumerate() {
                grad[j + 1] += -2.0 * res * xj;
            }
        }
        for (j, g) in grad.iter_mut().enumerate().skip(1) {
            *g += 2.0 * lambda * m.coefficients[j - 1];
        }
        let h = 1e-5;
        for j in 0..5 {
            assert!(
                grad[j].abs() < 1e-6,
                "analytic gradient component {j} = {}",
                grad[j]
            );
            let mut coef_hi = m.coefficients.clone();
            let mut coef_lo = m.coefficients.clone();
            let (b_hi, b_lo) = if j == 0 {
                (m.intercept + h, m.intercept - h)
            } else {
                coef_hi[j - 1] += h;
                coef_lo[j - 1] -= h;
                (m.intercept, m.intercept)
            };
            let fd = (objective(&coef_hi, b_hi) - objective(&coef_lo, b_lo)) / (2.0 * h);
            assert!(
                (fd - grad[j]).abs() < 1e-4,
                "finite-difference mismatch at {j}: {fd} vs {}",
                grad[j]
            );
        }
    }

    #[test]
    fn logistic_no_signal_predicts_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut d = DesignMatrix::new(2);
        for i in 0..200 {
            let x: Vec<f64> = (0..2)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            d.push_row(&x, (i % 2) as f64).unwrap();
        }
        let opts = LogisticOptions {
            ridge_lambda: 1e-3,
            ..Default::default()
        };
        let (m, report) = fit_logistic_with_report(&d, &opts).unwrap();
        assert!(report.converged);
        for c in &m.coefficients {
            assert!(c.abs() < 0.35, "coefficient {c} on pure-noise feature");
        }
        assert!(m.intercept.abs() < 0.2);
        let p = predict_proba(&m, &[0.0, 0.0]).unwrap();
        assert!((p - 0.5).abs() < 0.05);
    }

    #[test]
    fn logistic_recovers_slope_on_simulated_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut d = DesignMatrix::new(1);
        for _ in 0..10_000 {
            let x: f64 = rng.sample(StandardNormal);
            let y = if rng.gen::<f64>() < sigmoid(2.0 * x) {
                1.0
            } else {
                0.0
            };
            d.push_row(&[x], y).unwrap();
        }
        let m = fit_logistic(&d, &LogisticOptions::default()).unwrap();
        let slope = m.coefficients[0];
        assert!((slope - 2.0).abs() / 2.0 < 0.15, "recovered slope {slope}");
    }

    #[test]
    fn logistic_objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut d = DesignMatrix::new(3);
        for _ in 0..150 {
            let x: Vec<f64> = (0..3)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y = if rng.gen::<f64>() < sigmoid(x[0] - 0.5 * x[2]) {
                1.0
            } else {
                0.0
            };
            d.push_row(&x, y).unwrap();
        }
        let (_, report) = fit_logistic_with_report(&d, &LogisticOptions::default()).unwrap();
        for pair in report.objective_trace.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-10,
                "objective decreased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn hitting_the_iteration_cap_is_reported_not_fatal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut d = DesignMatrix::new(2);
        for _ in 0..120 {
            let x: Vec<f64> = (0..2)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y = if rng.gen::<f64>() < sigmoid(3.0 * x[0]) {
                1.0
            } else {
                0.0
            };
            d.push_row(&x, y).unwrap();
        }
        let opts = LogisticOptions {
            max_iter: 1,
            ..Default::default()
        };
        let (_, report) = fit_logistic_with_report(&d, &opts).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn logistic_rejects_single_class() {
        let d = design(&[(&[0.1], 1.0), (&[0.4], 1.0)]);
        assert!(matches!(
            fit_logistic(&d, &LogisticOptions::default()),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn proba_is_clipped_and_monotone_in_intercept() {
        let mut m = LogitModel {
            coefficients: vec![0.0],
            intercept: 0.0,
            clip_epsilon: 0.01,
        };
        assert_eq!(predict_proba(&m, &[0.0]).unwrap(), 0.5);
        m.intercept = 1e6;
        assert_eq!(predict_proba(&m, &[0.0]).unwrap(), 0.99);
        m.intercept = -1e6;
        assert_eq!(predict_proba(&m, &[0.0]).unwrap(), 0.01);
        let mut last = 0.0;
        for b in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            m.intercept = b;
            let p = predict_proba(&m, &[0.0]).unwrap();
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn predict_linear_basics() {
        let zero = LinearModel {
            coefficients: vec![0.0, 0.0],
            intercept: 1.5,
            feature_mode: FeatureMode::XOnly,
        };
        assert_eq!(predict_linear(&zero, &[3.0, -2.0]).unwrap(), 1.5);
        let m = LinearModel {
            coefficients: vec![1.0, 1.0],
            intercept: 0.0,
            feature_mode: FeatureMode::XOnly,
        };
        assert_eq!(predict_linear(&m, &[2.0, 3.0]).unwrap(), 5.0);
        assert!(matches!(
            predict_linear(&m, &[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }
}
