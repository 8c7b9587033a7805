use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use selectcf::error::{Error, Result};
use selectcf::eval::{
    adverse_threshold, dr_mse_estimate_fitted, eval_labels, location_stats, mse_vs_truth,
    policy_swap_fr,
};
use selectcf::experiment::{
    run_experiment, sweep_summary, ExperimentSpec, MetricRow, Setting, TEST_FRACTION,
};
use selectcf::learners::{fit_learner, FitOptions, LearnerKind};
use selectcf::model::{Aggregate, GenConfig};
use selectcf::{io, synth};

#[derive(Parser)]
#[command(
    name = "selectcf",
    about = "Counterfactual prediction with selectively hidden confounders: generate synthetic studies, run learner sweeps, evaluate, and compare placement policies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic study and write its sample and truth CSVs
    Generate(GenerateArgs),
    /// Run a sweep experiment over replicated synthetic studies
    Run(RunArgs),
    /// Evaluate a predictor (stored or freshly fit) on a stored study
    Eval(EvalArgs),
    /// Risk-ranked policy swap report per location
    Swap(SwapArgs),
    /// Aggregate a results CSV into per-(value, learner) means and stderrs
    SweepSummary(SummaryArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experimental setting (A, B, C or custom)
    #[arg(long, default_value = "A")]
    setting: String,
    /// Desk-scale profile: d=50, k_x=k_z=10, n=250
    #[arg(long)]
    fast: bool,
    /// Locations
    #[arg(long)]
    locations: Option<usize>,
    /// Samples per location
    #[arg(long)]
    n: Option<usize>,
    /// Confounder dimension
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k_x: Option<usize>,
    #[arg(long)]
    k_z: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Acceptance-rate range lower bound
    #[arg(long)]
    ar_lo: Option<f64>,
    /// Acceptance-rate range upper bound
    #[arg(long)]
    ar_hi: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ConfigArgs {
    fn build(&self) -> Result<(Setting, GenConfig)> {
        let setting = Setting::parse(&self.setting)?;
        let mut config = if self.fast {
            GenConfig::fast()
        } else {
            GenConfig::full()
        };
        setting.pin(&mut config);
        if let Some(v) = self.locations {
            config.locations = v;
        }
        if let Some(v) = self.n {
            config.samples_per_location = v;
        }
        if let Some(v) = self.d {
            config.dim = v;
        }
        if let Some(v) = self.k_x {
            config.k_x = v;
        }
        if let Some(v) = self.k_z {
            config.k_z = v;
        }
        if let Some(v) = self.rho {
            config.rho = v;
        }
        if let Some(v) = self.tau {
            config.tau = v;
        }
        if let Some(v) = self.ar_lo {
            config.ar_range.0 = v;
        }
        if let Some(v) = self.ar_hi {
            config.ar_range.1 = v;
        }
        config.seed = self.seed;
        Ok((setting, config))
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output CSV path; the truth CSV lands next to it as <stem>.truth.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Flat key-value file supplying defaults for the flags above
    #[arg(long)]
    config_file: Option<PathBuf>,
    /// Comma-separated sweep values (defaults to the setting's grid)
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
    /// Replicates per sweep value (default 20, or 5 under --fast)
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma-separated learners: SP,RA,DR,RA_ORACLE,DR_ORACLE,DR_NO_LABEL_EST
    #[arg(long, value_delimiter = ',', default_value = "SP,RA,DR")]
    learners: Vec<String>,
    /// Also emit the doubly-robust error estimate for DR-family learners
    #[arg(long)]
    dr_mse: bool,
    /// Fold-model aggregation: mean or sum
    #[arg(long, default_value = "mean")]
    aggregate: String,
    /// Output results CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Study samples CSV
    #[arg(long)]
    study: PathBuf,
    /// Companion truth CSV (enables ground-truth metrics)
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Stored predictor JSON
    #[arg(long, conflicts_with = "learner")]
    model: Option<PathBuf>,
    /// Fit this learner on the study's training split instead
    #[arg(long)]
    learner: Option<String>,
    /// Store the fitted predictor as JSON
    #[arg(long)]
    save_model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output metrics CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SwapArgs {
    /// Study samples CSV
    #[arg(long)]
    study: PathBuf,
    /// Stored predictor JSON
    #[arg(long, conflicts_with = "learner")]
    model: Option<PathBuf>,
    /// Fit this learner on the study's training split instead
    #[arg(long)]
    learner: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adverse-outcome quantile over pooled desired-treatment outcomes
    #[arg(long, default_value_t = 0.75)]
    quantile: f64,
    /// Output CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummaryArgs {
    /// Results CSV produced by `run`
    #[arg(long)]
    input: PathBuf,
    /// Output summary CSV
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Swap(args) => cmd_swap(args),
        Command::SweepSummary(args) => cmd_summary(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let (_, config) = args.config.build()?;
    let study = synth::generate_study(&config)?;
    io::write_study_csv(&study, &args.out)?;
    let tp = io::truth_path(&args.out);
    io::write_truth_csv(&study, &tp)?;
    println!(
        "wrote {} samples to {} (+ {})",
        study.len(),
        args.out.display(),
        tp.display()
    );
    Ok(())
}

fn apply_config_file(args: &mut RunArgs) -> Result<()> {
    let Some(path) = &args.config_file else {
        return Ok(());
    };
    // file values fill in only where the CLI kept its defaults
    let raw_args: Vec<String> = std::env::args().collect();
    let explicitly = |flag: &str| {
        raw_args
            .iter()
            .any(|a| a == flag || a.starts_with(&format!("{flag}=")))
    };
    for (k, v) in io::read_flags_file(path)? {
        match k.as_str() {
            "setting" if !explicitly("--setting") => args.config.setting = v,
            "fast" if !explicitly("--fast") => {
                args.config.fast = v.parse().map_err(|_| bad(&k, &v))?
            }
            "locations" if !explicitly("--locations") => {
                args.config.locations = Some(v.parse().map_err(|_| bad(&k, &v))?)
            }
            "n" if !explicitly("--n") => args.config.n = Some(v.parse().map_err(|_| bad(&k, &v))?),
            "d" if !explicitly("--d") => args.config.d = Some(v.parse().map_err(|_| bad(&k, &v))?),
            "k_x" if !explicitly("--k-x") => {
                args.config.k_x = Some(v.parse().map_err(|_| bad(&k, &v))?)
            }
            "k_z" if !explicitly("--k-z") => {
                args.config.k_z = Some(v.parse().map_err(|_| bad(&k, &v))?)
            }
            "rho" if !explicitly("--rho") => {
                args.config.rho = Some(v.parse().map_err(|_| bad(&k, &v))?)
            }
            "tau" if !explicitly("--tau") => {
                args.config.tau = Some(v.parse().map_err(|_| bad(&k, &v))?)
            }
            "seed" if !explicitly("--seed") => {
                args.config.seed = v.parse().map_err(|_| bad(&k, &v))?
            }
            "replicates" if !explicitly("--replicates") => {
                args.replicates = Some(v.parse().map_err(|_| bad(&k, &v))?)
            }
            "sweep" if !explicitly("--sweep") => {
                args.sweep = v
                    .split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|_| bad(&k, s)))
                    .collect::<Result<_>>()?;
            }
            "learners" if !explicitly("--learners") => {
                args.learners = v.split(',').map(|s| s.trim().to_string()).collect();
            }
            "aggregate" if !explicitly("--aggregate") => args.aggregate = v,
            "dr_mse" if !explicitly("--dr-mse") => {
                args.dr_mse = v.parse().map_err(|_| bad(&k, &v))?
            }
            _ => {}
        }
    }
    Ok(())
}

fn bad(key: &str, value: &str) -> Error {
    Error::Parse(format!(
        "config value '{value}' for key '{key}' does not parse"
    ))
}

fn cmd_run(mut args: RunArgs) -> Result<()> {
    apply_config_file(&mut args)?;
    let (setting, base) = args.config.build()?;
    let learners: Vec<LearnerKind> = args
        .learners
        .iter()
        .map(|s| LearnerKind::parse(s))
        .collect::<Result<_>>()?;
    let aggregate = match args.aggregate.to_ascii_lowercase().as_str() {
        "mean" => Aggregate::Mean,
        "sum" => Aggregate::Sum,
        other => {
            return Err(Error::Parse(format!(
                "aggregate must be mean or sum, got '{other}'"
            )))
        }
    };
    let mut spec = ExperimentSpec::new(setting, base);
    if !args.sweep.is_empty() {
        spec.sweep_values = args.sweep.clone();
    }
    spec.replicates = args.replicates.unwrap_or(if args.config.fast { 5 } else { 20 });
    spec.learners = learners;
    spec.with_dr_mse = args.dr_mse;
    spec.options.aggregate = aggregate;
    spec.out_path = Some(args.out.clone());
    let rows = run_experiment(&spec)?;
    println!("wrote {} metric rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn load_or_fit(
    study: &selectcf::Study,
    model: &Option<PathBuf>,
    learner: &Option<String>,
    seed: u64,
) -> Result<(selectcf::FittedPredictor, LearnerKind)> {
    match (model, learner) {
        (Some(path), None) => {
            let p = io::read_predictor_json(path)?;
            let kind = match p.learner {
                selectcf::Learner::Sp => LearnerKind::Sp,
                selectcf::Learner::Ra => LearnerKind::Ra,
                selectcf::Learner::Dr => LearnerKind::Dr,
            };
            Ok((p, kind))
        }
        (None, Some(name)) => {
            let kind = LearnerKind::parse(name)?;
            if kind.uses_oracle() {
                return Err(Error::InvalidConfig(
                    "oracle learner variants need the in-process generator config; use SP, RA, DR, or DR_NO_LABEL_EST".into(),
                ));
            }
            let (p, _) = fit_learner(kind, &study.train_view(), seed, &FitOptions::default())?;
            Ok((p, kind))
        }
        _ => Err(Error::InvalidConfig(
            "provide exactly one of --model or --learner".into(),
        )),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut study = io::read_study_csv(&args.study, args.truth.as_deref())?;
    study.assign_split(TEST_FRACTION, args.seed);
    let (predictor, kind) = load_or_fit(&study, &args.model, &args.learner, args.seed)?;
    if let Some(path) = &args.save_model {
        io::write_predictor_json(&predictor, path)?;
    }
    let train = study.train_view();
    let test = study.test_view();
    let opts = FitOptions::default();
    let labels = eval_labels(&train, kind, &opts)?;

    let mut rows = Vec::new();
    let mut push = |metric: &str, value: f64| {
        rows.push(MetricRow {
            seed: args.seed,
            setting: "custom".into(),
            param: 0.0,
            learner: kind.as_str().into(),
            metric: metric.into(),
            value,
        });
    };
    if args.truth.is_some() {
        push("mse_truth", mse_vs_truth(&predictor, &test)?);
    }
    if predictor.nuisance_pi.is_some() {
        push(
            "mse_dr_est",
            dr_mse_estimate_fitted(&predictor, &train, &test, &labels, &opts)?,
        );
    }
    let thr = adverse_threshold(&study.view(), 0.75)?;
    for s in location_stats(&study.view(), thr) {
        rows.push(MetricRow {
            seed: args.seed,
            setting: "custom".into(),
            param: s.location as f64,
            learner: kind.as_str().into(),
            metric: "ar_emp".into(),
            value: s.ar_emp,
        });
        rows.push(MetricRow {
            seed: args.seed,
            setting: "custom".into(),
            param: s.location as f64,
            learner: kind.as_str().into(),
            metric: "fr_emp".into(),
            value: s.fr_emp,
        });
    }
    emit_metrics(&rows, args.out.as_deref())
}

fn cmd_swap(args: SwapArgs) -> Result<()> {
    let mut study = io::read_study_csv(&args.study, None)?;
    study.assign_split(TEST_FRACTION, args.seed);
    let (predictor, kind) = load_or_fit(&study, &args.model, &args.learner, args.seed)?;
    let opts = FitOptions::default();
    let labels = eval_labels(&study.train_view(), kind, &opts)?;
    let view = study.view();
    let thr = adverse_threshold(&view, args.quantile)?;
    let outcomes = policy_swap_fr(&predictor, &view, &labels, thr)?;

    let mut text = String::from("location,selected,fr_before,fr_after\n");
    for o in &outcomes {
        text.push_str(&format!(
            "{},{},{},{}\n",
            o.location, o.selected, o.fr_before, o.fr_after
        ));
    }
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_summary(args: SummaryArgs) -> Result<()> {
    let rows = io::read_metrics_csv(&args.input)?;
    let summary = sweep_summary(&rows);
    io::write_summary_csv(&args.out, &summary)?;
    println!(
        "wrote {} summary rows to {}",
        summary.len(),
        args.out.display()
    );
    Ok(())
}

fn emit_metrics(rows: &[MetricRow], out: Option<&std::path::Path>) -> Result<()> {
    match out {
        Some(path) => {
            io::write_metrics_csv(path, rows)?;
            println!("wrote {} metric rows to {}", rows.len(), path.display());
        }
        None => {
            println!("seed,setting,param,learner,metric,value");
            for r in rows {
                println!(
                    "{},{},{},{},{},{}",
                    r.seed, r.setting, r.param, r.learner, r.metric, r.value
                );
            }
        }
    }
    Ok(())
}
