//! Command-line front end: `simulate`, `augment` and `fit-eval`.
//!
//! Every command accepts `--config FILE` (TOML with dotted keys such as
//! `pipeline.m = 1000` or `bench.repetitions = 20`) and `--seed`. Flags
//! override file values. The default seed is read from `TLCQM_SEED` when set.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_csv_with_header, DomainDataset, RngStream};
use crate::density_ratio::write_weights_csv;
use crate::error::{Error, Result};
use crate::learners::{evaluate_mse, tune_and_fit, CvReport, LearnerKind};
use crate::pipeline::{read_augmented_csv, run_augmentation, PipelineConfig, PredictMode};
use crate::quantile_match::ConstraintMode;
use crate::simbench::{run_benchmark, BenchConfig};

pub const SEED_ENV: &str = "TLCQM_SEED";

#[derive(Debug, Parser)]
#[command(name = "tlcqm", version, about = "Transfer learning by conditional quantile matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the simulation benchmark and write per-repetition and summary CSVs.
    Simulate(SimulateArgs),
    /// Augment a target CSV with calibrated rows from one or more source CSVs.
    Augment(AugmentArgs),
    /// Tune a learner by cross-validation on an augmented CSV and report test MSE.
    FitEval(FitEvalArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file; flags take precedence over its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PredictArg {
    Mean,
    SingleDraw,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Generated responses per target point and source.
    #[arg(long)]
    pub m: Option<usize>,
    /// Draws averaged per source row.
    #[arg(long)]
    pub m_pred: Option<usize>,
    /// Engression training epochs.
    #[arg(long)]
    pub engression_epochs: Option<usize>,
    /// Engression hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub engression_hidden: Option<Vec<usize>>,
    /// Give every source row weight 1 instead of a KMM estimate.
    #[arg(long)]
    pub no_density_ratio: bool,
    /// Constrain the source coefficients to be nonnegative.
    #[arg(long)]
    pub nonneg: bool,
    /// How source rows are predicted from each generator.
    #[arg(long, value_enum)]
    pub predict: Option<PredictArg>,
    /// Train generators on raw rather than standardized features.
    #[arg(long)]
    pub no_standardize: bool,
    /// Iteration cap for the KMM solver.
    #[arg(long)]
    pub kmm_max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Target sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n0: Option<Vec<usize>>,
    /// Source-to-target size ratios, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ratio: Option<Vec<f64>>,
    /// Monte Carlo repetitions per grid cell.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Learners to evaluate (krr, mlp), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub learners: Option<Vec<LearnerKind>>,
    /// Cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Epochs for each MLP candidate.
    #[arg(long)]
    pub mlp_epochs: Option<usize>,
    /// Directory receiving results.csv and summary.csv.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Target-domain CSV.
    #[arg(long, value_name = "CSV")]
    pub target: PathBuf,
    /// Source-domain CSV; repeat once per source.
    #[arg(long, value_name = "CSV")]
    pub source: Vec<PathBuf>,
    /// Output CSV: features, y_tilde, weight, origin.
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Response column in the input files.
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Diagnostics file; defaults to the output path with a `.diagnostics.toml` suffix.
    #[arg(long, value_name = "FILE")]
    pub diagnostics: Option<PathBuf>,
    /// Write per-source KMM weights (`weights_source_<k>.csv`) into this directory.
    #[arg(long, value_name = "DIR")]
    pub dump_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitEvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training CSV in the augmented format.
    #[arg(long, value_name = "CSV")]
    pub train: PathBuf,
    /// Test CSV with the same feature columns and a response column.
    #[arg(long, value_name = "CSV")]
    pub test: PathBuf,
    /// Learner: krr or mlp.
    #[arg(long)]
    pub learner: LearnerKind,
    /// Response column in the test file.
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Epochs for each MLP candidate.
    #[arg(long)]
    pub mlp_epochs: Option<usize>,
    /// Report file.
    #[arg(long, value_name = "FILE", default_value = "fit_eval_report.toml")]
    pub report: PathBuf,
}

/// Contents of a `--config` file. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub pipeline: PipelineConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("tlcqm-out"),
            pipeline: PipelineConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_toml(&text)
    }

    fn resolve(common: &CommonArgs) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn apply_pipeline(&mut self, a: &PipelineArgs) {
        let p = &mut self.pipeline;
        if let Some(m) = a.m {
            p.m = m;
        }
        if let Some(m) = a.m_pred {
            p.m_pred = m;
        }
        if let Some(e) = a.engression_epochs {
            p.engression.epochs = e;
        }
        if let Some(h) = &a.engression_hidden {
            p.engression.hidden_sizes = h.clone();
        }
        if a.no_density_ratio {
            p.use_density_ratio = false;
        }
        if a.nonneg {
            p.quantile.constraint_mode = ConstraintMode::NonnegSlopes;
        }
        if let Some(mode) = a.predict {
            p.predict_mode = match mode {
                PredictArg::Mean => PredictMode::Mean,
                PredictArg::SingleDraw => PredictMode::SingleDraw,
            };
        }
        if a.no_standardize {
            p.standardize = false;
        }
        if let Some(it) = a.kmm_max_iter {
            p.kmm.max_iter = it;
        }
        p.seed = self.seed;
    }
}

/// Failure split by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(Error),
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e)
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e)
}

/// Dispatches a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Augment(a) => cmd_augment(&a),
        Command::FitEval(a) => cmd_fit_eval(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error());
            f.exit_code()
        }
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::resolve(&a.common).map_err(usage)?;
    cfg.apply_pipeline(&a.pipeline);
    let b = &mut cfg.bench;
    if let Some(v) = &a.n0 {
        b.n0 = v.clone();
    }
    if let Some(v) = &a.ratio {
        b.ratio = v.clone();
    }
    if let Some(v) = a.reps {
        b.repetitions = v;
    }
    if let Some(v) = &a.learners {
        b.learners = v.clone();
    }
    if let Some(v) = a.folds {
        b.folds = v;
    }
    if let Some(v) = a.mlp_epochs {
        b.mlp_epochs = v;
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = v.clone();
    }
    cfg.bench.validate().map_err(usage)?;
    cfg.pipeline.validate().map_err(usage)?;

    let result = run_benchmark(&cfg.bench, &cfg.pipeline, cfg.seed).map_err(runtime)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| runtime(Error::io(&cfg.out_dir, e)))?;
    result.write_results_csv(cfg.out_dir.join("results.csv")).map_err(runtime)?;
    result.write_summary_csv(cfg.out_dir.join("summary.csv")).map_err(runtime)?;
    for (n0, ratio, rep, msg) in &result.failures {
        eprintln!("skipped n0={n0} ratio={ratio} repetition {rep}: {msg}");
    }
    for s in &result.summary {
        println!(
            "{:<4} {:<12} n0={:<5} ratio={:<5} mse={:.5} sd={:.5} reps={}",
            s.learner.name(),
            s.regime.name(),
            s.n0,
            s.ratio,
            s.mean_mse,
            s.sd_mse,
            s.repetitions
        );
    }
    Ok(())
}

fn load_domain(path: &Path, response: &str, id: u32) -> Result<(Vec<String>, DomainDataset)> {
    let (names, mut sets) = load_csv_with_header(path, response, None)?;
    match sets.pop() {
        Some(ds) if sets.is_empty() => Ok((names, ds.with_domain_id(id))),
        _ => Err(Error::EmptyInput(format!("{} has no data rows", path.display()))),
    }
}

pub fn cmd_augment(a: &AugmentArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::resolve(&a.common).map_err(usage)?;
    cfg.apply_pipeline(&a.pipeline);
    cfg.pipeline.validate().map_err(usage)?;

    let (names, target) = load_domain(&a.target, &a.response, 0).map_err(usage)?;
    let mut sources = Vec::with_capacity(a.source.len());
    for (k, path) in a.source.iter().enumerate() {
        let (src_names, ds) = load_domain(path, &a.response, k as u32 + 1).map_err(usage)?;
        if src_names != names {
            return Err(usage(Error::invalid(format!(
                "feature columns of {} differ from the target file",
                path.display()
            ))));
        }
        sources.push(ds);
    }

    let out = run_augmentation(&target, &sources, &cfg.pipeline).map_err(runtime)?;
    out.data.write_csv(&a.out, &names).map_err(runtime)?;
    let diag_path = a.diagnostics.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".diagnostics.toml");
        PathBuf::from(p)
    });
    out.write_diagnostics(&diag_path).map_err(runtime)?;
    if let Some(dir) = &a.dump_weights {
        std::fs::create_dir_all(dir).map_err(|e| runtime(Error::io(dir, e)))?;
        for (k, w) in out.diagnostics.kmm.iter().enumerate() {
            write_weights_csv(dir.join(format!("weights_source_{}.csv", k + 1)), w).map_err(runtime)?;
        }
    }
    println!("wrote {} rows to {}", out.data.len(), a.out.display());
    if let Some(fit) = &out.fit {
        println!("beta = {:?}", fit.beta);
    }
    Ok(())
}

#[derive(Serialize)]
struct FitEvalReport<'a> {
    learner: &'static str,
    test_mse: f64,
    n_train: usize,
    n_test: usize,
    seed: u64,
    cv: &'a CvReport,
}

pub fn cmd_fit_eval(a: &FitEvalArgs) -> Result<(), Failure> {
    let cfg = RunConfig::resolve(&a.common).map_err(usage)?;
    let folds = a.folds.unwrap_or(cfg.bench.folds);
    let mlp_epochs = a.mlp_epochs.unwrap_or(cfg.bench.mlp_epochs);
    if folds < 2 || mlp_epochs == 0 {
        return Err(usage(Error::invalid("folds must be >= 2 and mlp epochs >= 1")));
    }
    let (names, train) = read_augmented_csv(&a.train).map_err(usage)?;
    let (test_names, test) = load_domain(&a.test, &a.response, 0).map_err(usage)?;
    if test_names != names {
        return Err(usage(Error::invalid("test feature columns differ from the training file")));
    }
    let training = train.to_training_set().map_err(usage)?;
    let mut rng = RngStream::new(cfg.seed, 0);
    let (model, report) = tune_and_fit(&training, a.learner, mlp_epochs, folds, &mut rng).map_err(runtime)?;
    let test_mse = evaluate_mse(&model, &test).map_err(runtime)?;
    let file = FitEvalReport {
        learner: a.learner.name(),
        test_mse,
        n_train: training.len(),
        n_test: test.len(),
        seed: cfg.seed,
        cv: &report,
    };
    let text = toml::to_string(&file).map_err(|e| runtime(Error::Config(e.to_string())))?;
    std::fs::write(&a.report, text).map_err(|e| runtime(Error::io(&a.report, e)))?;
    println!("test_mse = {test_mse}");
    Ok(())
}
