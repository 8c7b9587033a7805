//! Cross-module learner behavior on generated studies: control runs without
//! hidden confounding, the high-correlation regime, and held-out-location
//! evaluation.

use std::collections::BTreeSet;

use selectcf::eval::{holdout_location_mse, mse_vs_truth};
use selectcf::experiment::TEST_FRACTION;
use selectcf::learners::{fit_learner, FitOptions, LearnerKind};
use selectcf::model::GenConfig;
use selectcf::synth::{generate_study, location_policies};

/// Desk dimensions with 1000 samples per location.
fn profile() -> GenConfig {
    GenConfig {
        samples_per_location: 1000,
        ..GenConfig::fast()
    }
}

fn learner_means(
    config: &GenConfig,
    kinds: &[LearnerKind],
    seeds: std::ops::Range<u64>,
) -> Vec<f64> {
    let opts = FitOptions::default();
    let mut means = vec![0.0; kinds.len()];
    let count = seeds.clone().count() as f64;
    for seed in seeds {
        let mut c = config.clone();
        c.seed = seed;
        let mut study = generate_study(&c).unwrap();
        study.assign_split(TEST_FRACTION, seed);
        let train = study.train_view();
        let test = study.test_view();
        for (slot, &kind) in means.iter_mut().zip(kinds) {
            let (p, _) = fit_learner(kind, &train, seed ^ 0x5f5f, &opts).unwrap();
            *slot += mse_vs_truth(&p, &test).unwrap() / count;
        }
    }
    means
}

#[test]
fn without_hidden_confounding_all_learners_agree() {
    // k_z = 0 control run: nothing to correct, so the baseline matches the
    // two-stage learners; the doubly robust variant pays a small variance
    // premium for its correction term.
    let config = GenConfig {
        k_z: 0,
        ..profile()
    };
    let kinds = [LearnerKind::Sp, LearnerKind::Ra, LearnerKind::Dr];
    let m = learner_means(&config, &kinds, 300..310);
    let (sp, ra, dr) = (m[0], m[1], m[2]);
    assert!((sp - ra).abs() / sp.max(ra) < 0.2, "SP {sp} vs RA {ra}");
    assert!((sp - dr).abs() / sp.max(dr) < 0.6, "SP {sp} vs DR {dr}");
}

#[test]
fn high_correlation_makes_observed_confounders_sufficient() {
    // at rho near 1 the observed features proxy the hidden ones, so the
    // baseline stops losing and its error collapses relative to low rho
    let kinds = [LearnerKind::Sp, LearnerKind::Dr];
    let mut high = profile();
    high.rho = 0.99;
    let at_high = learner_means(&high, &kinds, 320..328);
    let mut low = profile();
    low.rho = 0.1;
    let at_low = learner_means(&low, &kinds, 320..328);
    assert!(
        at_high[0] <= at_high[1],
        "SP {} should not lose at rho=0.99 (DR {})",
        at_high[0],
        at_high[1]
    );
    assert!(
        at_low[0] > at_low[1],
        "SP {} should lose at rho=0.1 (DR {})",
        at_low[0],
        at_low[1]
    );
    assert!(
        at_high[0] < 0.25 * at_low[0],
        "SP error should collapse with rho: {} vs {}",
        at_high[0],
        at_low[0]
    );
}

#[test]
fn full_scale_smoke_keeps_the_two_stage_advantage() {
    // one pass at the 250-dimension default profile: the 501-feature
    // nuisance fits stay finite and regression adjustment beats the baseline;
    // the doubly robust variant pays a large correction-variance premium at
    // this dimension-to-sample ratio and is only required to stay finite
    let config = GenConfig {
        seed: 901,
        ..GenConfig::full()
    };
    let mut study = generate_study(&config).unwrap();
    study.assign_split(TEST_FRACTION, config.seed);
    let train = study.train_view();
    let test = study.test_view();
    let opts = FitOptions::default();
    let mut mse = std::collections::BTreeMap::new();
    for kind in [LearnerKind::Sp, LearnerKind::Ra, LearnerKind::Dr] {
        let (p, _) = fit_learner(kind, &train, config.seed, &opts).unwrap();
        let v = mse_vs_truth(&p, &test).unwrap();
        assert!(v.is_finite());
        mse.insert(kind.as_str(), v);
    }
    assert!(
        mse["RA"] < mse["SP"],
        "RA {} should beat SP {} at full scale",
        mse["RA"],
        mse["SP"]
    );
}

#[test]
fn outlier_location_holdout_exposes_the_baseline() {
    // the most lenient location keeps high-risk cases in the desired
    // treatment, so its desired-treatment samples cover the region the
    // baseline never trains on
    let opts = FitOptions::default();
    let mut sp_resid = 0.0;
    let mut dr_resid = 0.0;
    let mut sp_truth = 0.0;
    let mut dr_truth = 0.0;
    let seeds = 340..360u64;
    let count = seeds.clone().count() as f64;
    for seed in seeds {
        let config = GenConfig { seed, ..profile() };
        let study = generate_study(&config).unwrap();
        let outlier = location_policies(&config)
            .into_iter()
            .max_by(|a, b| a.ar.partial_cmp(&b.ar).unwrap())
            .unwrap()
            .location;
        let holdout: BTreeSet<usize> = [outlier].into_iter().collect();
        let view = study.view();
        let sp = holdout_location_mse(&view, LearnerKind::Sp, &holdout, seed, &opts).unwrap();
        let dr = holdout_location_mse(&view, LearnerKind::Dr, &holdout, seed, &opts).unwrap();
        sp_resid += sp.residual_mse / count;
        dr_resid += dr.residual_mse / count;
        sp_truth += sp.truth_mse / count;
        dr_truth += dr.truth_mse / count;
    }
    assert!(
        sp_resid > dr_resid,
        "holdout residual: SP {sp_resid} should exceed DR {dr_resid}"
    );
    assert!(
        sp_truth > dr_truth,
        "holdout truth-side MSE: SP {sp_truth} should exceed DR {dr_truth}"
    );
}
