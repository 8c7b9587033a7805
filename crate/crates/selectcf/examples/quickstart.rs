use selectcf::learners::{FitOptions, LearnerKind};
use selectcf::{eval, learners, synth, GenConfig, Result};

fn main() -> Result<()> {
    let config = GenConfig {
        seed: 7,
        ..GenConfig::fast()
    };
    let mut study = synth::generate_study(&config)?;
    study.assign_split(0.3, config.seed);
    let (predictor, _labels) = learners::fit_learner(
        LearnerKind::Dr,
        &study.train_view(),
        7,
        &FitOptions::default(),
    )?;
    let mse = eval::mse_vs_truth(&predictor, &study.test_view())?;
    println!("test MSE vs sealed target: {mse:.3}");
    Ok(())
}
