//! Experiment orchestration: the three sweep settings, replicate execution
//! over a work pool, and summary aggregation of result tables.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{dr_mse_estimate_fitted, mse_vs_truth};
use crate::learners::{fit_learner, FitOptions, LearnerKind};
use crate::model::GenConfig;
use crate::rng;
use crate::synth::generate_study;

pub const THREADS_ENV: &str = "SELECTCF_THREADS";
pub const TEST_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    A,
    B,
    C,
    Custom,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::A => "A",
            Setting::B => "B",
            Setting::C => "C",
            Setting::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Setting::A),
            "B" => Ok(Setting::B),
            "C" => Ok(Setting::C),
            "CUSTOM" => Ok(Setting::Custom),
            other => Err(Error::Parse(format!("unknown setting '{other}'"))),
        }
    }

    /// The parameter each setting sweeps.
    pub fn sweep_param(self) -> SweepParam {
        match self {
            Setting::A => SweepParam::Tau,
            Setting::B => SweepParam::Rho,
            Setting::C | Setting::Custom => SweepParam::KZ,
        }
    }

    /// Fix the setting's pinned parameters on a config. The swept parameter
    /// keeps whatever value the sweep later assigns.
    pub fn pin(self, config: &mut GenConfig) {
        match self {
            Setting::A => {
                config.k_z = config.k_x;
                config.rho = 0.25;
            }
            Setting::B => {
                config.k_z = config.k_x;
                config.tau = 0.5;
            }
            Setting::C => {
                config.rho = 0.25;
                config.tau = 0.5;
            }
            Setting::Custom => {}
        }
    }

    pub fn default_sweep(self) -> Vec<f64> {
        match self {
            Setting::A => vec![0.0, 0.25, 0.5, 0.75, 1.0],
            Setting::B => vec![0.1, 0.3, 0.5, 0.7, 0.9],
            Setting::C | Setting::Custom => vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    Tau,
    Rho,
    KZ,
}

impl SweepParam {
    pub fn apply(self, config: &mut GenConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::Tau => config.tau = value,
            SweepParam::Rho => config.rho = value,
            SweepParam::KZ => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "k_z sweep value must be a whole count, got {value}"
                    )));
                }
                config.k_z = value as usize;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub setting: Setting,
    pub sweep_values: Vec<f64>,
    pub replicates: usize,
    pub learners: Vec<LearnerKind>,
    pub base: GenConfig,
    pub out_path: Option<PathBuf>,
    /// Also report the doubly-robust error estimate for DR-family learners.
    pub with_dr_mse: bool,
    pub options: FitOptions,
}

impl ExperimentSpec {
    pub fn new(setting: Setting, base: GenConfig) -> Self {
        ExperimentSpec {
            setting,
            sweep_values: setting.default_sweep(),
            replicates: 20,
            learners: vec![LearnerKind::Sp, LearnerKind::Ra, LearnerKind::Dr],
            base,
            out_path: None,
            with_dr_mse: false,
            options: FitOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep_values.is_empty() {
            return Err(Error::InvalidConfig("sweep_values is empty".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be positive".into()));
        }
        if self.learners.is_empty() {
            return Err(Error::InvalidConfig("no learners requested".into()));
        }
        let mut probe = self.base.clone();
        self.setting.pin(&mut probe);
        for &v in &self.sweep_values {
            let mut c = probe.clone();
            self.setting.sweep_param().apply(&mut c, v)?;
            c.validate()?;
        }
        Ok(())
    }
}

/// One metric observation, the row format of every result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub setting: String,
    pub param: f64,
    pub learner: String,
    pub metric: String,
    pub value: f64,
}

/// The study seed for one (sweep value, replicate) cell.
pub fn replicate_seed(root: u64, value: f64, replicate: usize) -> u64 {
    rng::derive_seed(root, &[rng::REPLICATE, value.to_bits(), replicate as u64])
}

fn run_cell(spec: &ExperimentSpec, value: f64, replicate: usize) -> Result<Vec<MetricRow>> {
    let mut config = spec.base.clone();
    spec.setting.pin(&mut config);
    spec.setting.sweep_param().apply(&mut config, value)?;
    config.seed = replicate_seed(spec.base.seed, value, replicate);
    let mut study = generate_study(&config)?;
    study.assign_split(TEST_FRACTION, config.seed);
    let train = study.train_view();
    let test = study.test_view();

    let mut rows = Vec::new();
    for &kind in &spec.learners {
        let learner_seed = rng::derive_seed(config.seed, &[rng::LEARNER, kind.id()]);
        let (predictor, labels) = fit_learner(kind, &train, learner_seed, &spec.options)?;
        let mse = mse_vs_truth(&predictor, &test)?;
        rows.push(MetricRow {
            seed: config.seed,
            setting: spec.setting.as_str().to_string(),
            param: value,
            learner: kind.as_str().to_string(),
            metric: "mse_truth".to_string(),
            value: mse,
        });
        if spec.with_dr_mse && predictor.nuisance_pi.is_some() {
            let est = dr_mse_estimate_fitted(&predictor, &train, &test, &labels, &spec.options)?;
            rows.push(MetricRow {
                seed: config.seed,
                setting: spec.setting.as_str().to_string(),
                param: value,
                learner: kind.as_str().to_string(),
                metric: "mse_dr_est".to_string(),
                value: est,
            });
        }
    }
    Ok(rows)
}

/// Run a full sweep: every (sweep value, replicate) cell over the work pool,
/// rows collected and sorted by (value, replicate, learner) so output is
/// independent of scheduling. Writes the result CSV when `out_path` is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<MetricRow>> {
    spec.validate()?;
    let cells: Vec<(usize, usize)> = (0..spec.sweep_values.len())
        .flat_map(|v| (0..spec.replicates).map(move |r| (v, r)))
        .collect();
    let results: Vec<(usize, usize, Result<Vec<MetricRow>>)> = with_pool(|| {
        cells
            .par_iter()
            .map(|&(v, r)| (v, r, run_cell(spec, spec.sweep_values[v], r)))
            .collect()
    });
    let mut keyed: Vec<(usize, usize, Vec<MetricRow>)> = Vec::with_capacity(results.len());
    for (v, r, rows) in results {
        keyed.push((v, r, rows?));
    }
    keyed.sort_by_key(|(v, r, _)| (*v, *r));
    let mut rows = Vec::new();
    for (_, _, mut cell_rows) in keyed {
        rows.append(&mut cell_rows);
    }
    if let Some(path) = &spec.out_path {
        crate::io::write_metrics_csv(path, &rows)?;
    }
    Ok(rows)
}

/// Execute under a rayon pool sized by the SELECTCF_THREADS env var, or the
/// default global pool when unset.
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .expect("thread pool construction"),
        _ => f(),
    }
}

/// Per-(setting, param, learner, metric) mean and standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: String,
    pub param: f64,
    pub learner: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

pub fn sweep_summary(rows: &[MetricRow]) -> Vec<SummaryRow> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, u64, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((
                r.setting.clone(),
                r.param.to_bits(),
                r.learner.clone(),
                r.metric.clone(),
            ))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((setting, param_bits, learner, metric), values)| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let stderr = if values.len() > 1 {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                setting,
                param: f64::from_bits(param_bits),
                learner,
                metric,
                mean,
                stderr,
                count: values.len(),
            }
        })
        .collect()
}

/// Mean metric per (param, learner) from a result table, for trend checks.
pub fn mean_by_param_learner(rows: &[MetricRow], metric: &str) -> Vec<((f64, String), f64)> {
    let summary = sweep_summary(rows);
    summary
        .into_iter()
        .filter(|s| s.metric == metric)
        .map(|s| ((s.param, s.learner), s.mean))
        .collect()
}
