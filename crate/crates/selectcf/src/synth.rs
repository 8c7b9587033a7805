//! Multi-location synthetic study generator with selectively hidden
//! confounders and sealed per-sample ground truth.
//!
//! Confounders are jointly normal with correlation `rho` between paired
//! observed and hidden coordinates. Outcomes are linear in the active
//! confounders with a per-location noise variance tied to the outcome scale.
//! Treatment assignment runs through two decision stages: an initial screen
//! whose strictness is the location's acceptance rate, then a review that
//! either confirms the alternative treatment or reverts the case, producing
//! dual-treatment samples.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::Result;
use crate::model::{
    mask_selective, FeatureMode, GenConfig, LinearModel, ObservedSample, Split, Study, Treatment,
    TruthRecord,
};
use crate::rng;

/// Per-location decision policy: its acceptance rate, drawn once and fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationPolicy {
    pub location: usize,
    pub ar: f64,
}

/// Draw one observed/hidden confounder pair per coordinate:
/// `x_i ~ N(0,1)`, `z_i ~ N(rho * x_i, 1 - rho^2)`.
pub fn gen_confounders<R: Rng>(config: &GenConfig, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let d = config.dim;
    let sd = (1.0 - config.rho * config.rho).sqrt();
    let x: Vec<f64> = (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let z: Vec<f64> = x
        .iter()
        .map(|&xi| config.rho * xi + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (x, z)
}

fn head_sum(v: &[f64], k: usize) -> f64 {
    v[..k].iter().sum()
}

/// Noiseless outcome under the desired treatment.
pub fn true_mu_a1(x: &[f64], z: &[f64], config: &GenConfig) -> f64 {
    config.effect_scale() * (head_sum(x, config.k_x) + head_sum(z, config.k_z))
}

/// Noiseless outcome under the dual treatment. The treatment-effect term
/// scales with `tau` and vanishes with it, so the two potential outcomes
/// coincide at `tau = 0`.
pub fn true_mu_a3(x: &[f64], z: &[f64], config: &GenConfig) -> f64 {
    let base = head_sum(x, config.k_x) + head_sum(z, config.k_z);
    let effect = head_sum(x, config.k_x) + z[..config.k_z].iter().map(|v| v * v).sum::<f64>();
    config.effect_scale() * (base - config.tau * effect)
}

/// Target regression: the desired-treatment outcome marginalized over the
/// hidden confounders given the observed ones.
pub fn true_nu(x: &[f64], config: &GenConfig) -> f64 {
    config.effect_scale() * (head_sum(x, config.k_x) + config.rho * head_sum(x, config.k_z))
}

/// `true_nu` as an explicit linear model, for oracle diagnostics.
pub fn true_nu_model(config: &GenConfig) -> LinearModel {
    let c = config.effect_scale();
    let mut coefficients = vec![0.0; config.dim];
    for (i, w) in coefficients.iter_mut().enumerate() {
        if i < config.k_x {
            *w += c;
        }
        if i < config.k_z {
            *w += c * config.rho;
        }
    }
    LinearModel {
        coefficients,
        intercept: 0.0,
        feature_mode: FeatureMode::XOnly,
    }
}

/// Probability that the initial decision leans away from the desired
/// treatment; strictly inside (0,1).
pub fn true_propensity(x: &[f64], z: &[f64], config: &GenConfig) -> f64 {
    let scale = 1.0 / ((config.k_x + config.k_z) as f64).sqrt();
    crate::regress::sigmoid(scale * (head_sum(x, config.k_x) + head_sum(z, config.k_z)))
}

/// Noise draws for one location: each is `N(0, sigma^2)` with
/// `sigma^2 = sum(mu^2) / (2n)` over the location's noiseless outcomes.
pub fn gen_noise<R: Rng>(mu_values: &[f64], rng: &mut R) -> Vec<f64> {
    let n = mu_values.len();
    let sigma2 = mu_values.iter().map(|m| m * m).sum::<f64>() / (2.0 * n as f64);
    let sigma = sigma2.sqrt();
    (0..n)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Outcomes for one location's samples: `mu + noise`, noise variance from
/// `gen_noise`. All-zero `mu_values` produce exactly noiseless outcomes.
pub fn gen_outcome<R: Rng>(mu_values: &[f64], rng: &mut R) -> Vec<f64> {
    let eps = gen_noise(mu_values, rng);
    mu_values.iter().zip(&eps).map(|(m, e)| m + e).collect()
}

/// Two-stage treatment draw. The initial screen flags the case with
/// probability `min(0.5 * pi / ar, 0.99)`; flagged cases are confirmed into
/// the alternative treatment with probability `pi`, otherwise reverted.
pub fn assign_treatment<R: Rng>(pi: f64, ar: f64, rng: &mut R) -> Treatment {
    let p_flag = (0.5 * pi / ar).min(0.99);
    // both uniforms are always drawn so the stream position per sample is fixed
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    if u1 >= p_flag {
        Treatment::A1
    } else if u2 < pi {
        Treatment::A2
    } else {
        Treatment::A3
    }
}

struct LocationBlock {
    samples: Vec<ObservedSample>,
    truth: Vec<TruthRecord>,
}

fn generate_location(config: &GenConfig, location: usize) -> LocationBlock {
    let n = config.samples_per_location;
    let seed = config.seed;
    let loc = location as u64;

    let mut policy_rng = rng::stream(seed, &[rng::POLICY, loc]);
    let (ar_lo, ar_hi) = config.ar_range;
    let ar: f64 = if ar_hi > ar_lo {
        policy_rng.gen_range(ar_lo..ar_hi)
    } else {
        ar_lo
    };

    let mut conf_rng = rng::stream(seed, &[rng::CONFOUNDERS, loc]);
    let mut xs = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut mu1 = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, z) = gen_confounders(config, &mut conf_rng);
        mu1.push(true_mu_a1(&x, &z, config));
        xs.push(x);
        zs.push(z);
    }

    let mut noise_rng = rng::stream(seed, &[rng::NOISE, loc]);
    let eps = gen_noise(&mu1, &mut noise_rng);

    let mut treat_rng = rng::stream(seed, &[rng::TREATMENT, loc]);
    let mut samples = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let x = &xs[i];
        let z = &zs[i];
        let pi = true_propensity(x, z, config);
        let t = assign_treatment(pi, ar, &mut treat_rng);
        let mu_a1 = mu1[i];
        let mu_a3 = true_mu_a3(x, z, config);
        // one noise draw per sample, shared across its potential outcomes
        let y_a1 = mu_a1 + eps[i];
        let y = match t {
            Treatment::A1 => y_a1,
            _ => mu_a3 + eps[i],
        };
        samples.push(ObservedSample {
            location,
            t,
            y,
            x: x.clone(),
            z: mask_selective(z, t),
        });
        truth.push(TruthRecord {
            nu: true_nu(x, config),
            mu_a1,
            mu_a3,
            y_a1,
            pi,
            z_full: z.clone(),
        });
    }
    LocationBlock { samples, truth }
}

/// Generate a full study. Locations are independent given their derived
/// seeds, so generation parallelizes without affecting the result.
pub fn generate_study(config: &GenConfig) -> Result<Study> {
    config.validate()?;
    let blocks: Vec<LocationBlock> = (0..config.locations)
        .into_par_iter()
        .map(|l| generate_location(config, l))
        .collect();
    let mut samples = Vec::with_capacity(config.locations * config.samples_per_location);
    let mut truth = Vec::with_capacity(samples.capacity());
    for b in blocks {
        samples.extend(b.samples);
        truth.extend(b.truth);
    }
    let split = vec![Split::Train; samples.len()];
    Ok(Study {
        samples,
        truth,
        config: config.clone(),
        split,
    })
}

/// The drawn acceptance rate for each location of a config, in location order.
pub fn location_policies(config: &GenConfig) -> Vec<LocationPolicy> {
    (0..config.locations)
        .map(|location| {
            let mut policy_rng = rng::stream(config.seed, &[rng::POLICY, location as u64]);
            let (ar_lo, ar_hi) = config.ar_range;
            let ar: f64 = if ar_hi > ar_lo {
                policy_rng.gen_range(ar_lo..ar_hi)
            } else {
                ar_lo
            };
            LocationPolicy { location, ar }
        })
        .collect()
}
