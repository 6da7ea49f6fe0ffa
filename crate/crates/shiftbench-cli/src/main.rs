//! shiftbench: estimate label shift on posterior/logit CSVs, fit
//! calibrators, generate Dirichlet-shift scenarios, and run benchmark
//! sweeps.
//!
//! stdout carries machine-readable JSON only; human-readable messages go to
//! stderr. Exit codes: 0 success, 2 input error (with line-numbered
//! messages for file problems), 3 computation error. Every command writes a
//! `<command>_manifest.json` next to its outputs so a run can be replayed.
//! The SHIFTBENCH_SEED environment variable overrides the base seed of the
//! `simulate` and `benchmark` commands.

mod io;
mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use shiftbench::calibration::{
    apply_calibrator, fit_calibrator_with_bins, Calibrator, CalibratorKind,
};
use shiftbench::estimators::{
    estimate_bbsl, estimate_cc, estimate_em, estimate_leip, estimate_rlls, mean_prediction,
    EmConfig, EmInit, EstimateResult, LeipConfig, MeanMode, RllsConfig, Smoothing, TauRule,
};
use shiftbench::evaluation::{
    run_benchmark, source_prior, weights_from, BenchmarkConfig, BenchmarkData, EstimatorChoice,
    WeightConvention,
};
use shiftbench::prob::{ConfusionMatrix, LabeledBatch, PosteriorMatrix, ProbabilitySimplex};
use shiftbench::rng::derive_seed;
use shiftbench::simulation::{
    estimate_confusion, oracle_generate, sample_dirichlet_prior, ConfusionMode, GaussianOracle,
    ScenarioRecord,
};

use manifest::RunManifest;

/// CLI failure: input problems exit 2, computation problems exit 3.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Compute(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn compute(msg: impl Into<String>) -> Self {
        CliError::Compute(msg.into())
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Compute(m) => m,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "shiftbench",
    version,
    about = "Label shift estimation, calibration fitting, and Dirichlet-shift benchmarking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the class distribution of an unlabeled test batch.
    Estimate(EstimateArgs),
    /// Fit a post-hoc calibrator on labeled validation logits.
    Calibrate(CalibrateArgs),
    /// Draw a Dirichlet-shifted target prior and optionally generate
    /// oracle batches realizing it.
    Simulate(SimulateArgs),
    /// Run a multi-run Dirichlet-shift benchmark sweep from a config file.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Cc,
    Em,
    Bbsl,
    Rlls,
    RllsHard,
    Leip,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Ts,
    Bcts,
    Vs,
    Nbvs,
}

impl MethodArg {
    fn kind(self) -> CalibratorKind {
        match self {
            MethodArg::Ts => CalibratorKind::Ts,
            MethodArg::Bcts => CalibratorKind::Bcts,
            MethodArg::Vs => CalibratorKind::Vs,
            MethodArg::Nbvs => CalibratorKind::Nbvs,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmInitArg {
    SourcePrior,
    SoftMean,
}

#[derive(Args)]
struct EstimateArgs {
    /// Test batch CSV: posteriors by default, logits with --logits or when
    /// a calibrator is supplied.
    test: PathBuf,
    #[arg(long, value_enum)]
    estimator: EstimatorArg,
    /// Treat the test file as raw logits (softmaxed before estimation).
    #[arg(long)]
    logits: bool,
    /// Calibrator JSON produced by `shiftbench calibrate`; implies the test
    /// file (and --validation-logits) hold logits.
    #[arg(long)]
    calibrator: Option<PathBuf>,
    /// Source prior CSV (single row or column). Defaults to the hard-count
    /// label distribution of the validation files.
    #[arg(long)]
    source_prior: Option<PathBuf>,
    /// Validation posteriors CSV (mutually exclusive with
    /// --validation-logits).
    #[arg(long)]
    validation_posteriors: Option<PathBuf>,
    /// Validation logits CSV.
    #[arg(long)]
    validation_logits: Option<PathBuf>,
    /// Validation labels CSV; required with either validation matrix.
    #[arg(long)]
    validation_labels: Option<PathBuf>,
    /// Explicit confidence threshold for leip (otherwise chosen by the
    /// minimum-recall rule, which needs validation files).
    #[arg(long)]
    tau: Option<f64>,
    /// Floor applied to leip's running label-pool distribution.
    #[arg(long)]
    smoothing_floor: Option<f64>,
    /// EM initialization; defaults to soft-mean when validation is given,
    /// source prior otherwise.
    #[arg(long, value_enum)]
    em_init: Option<EmInitArg>,
    #[arg(long, default_value_t = 1e-8)]
    em_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    em_max_iter: usize,
    /// Ridge weight for rlls; defaults to --rlls-alpha.
    #[arg(long)]
    rlls_lambda: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    rlls_alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    rlls_delta: f64,
    /// Directory the run manifest is written into.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Validation logits CSV.
    logits: PathBuf,
    /// Validation labels CSV.
    labels: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// ECE bin count for the fit report.
    #[arg(long, default_value_t = 15)]
    bins: usize,
    /// Also write the fitted calibrator JSON to this path.
    #[arg(long)]
    calibrator_out: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Dirichlet concentration; smaller is a more extreme shift.
    #[arg(long)]
    alpha: f64,
    /// Number of classes; inferred from --oracle-spec when omitted.
    #[arg(long)]
    classes: Option<usize>,
    /// Base seed (overridden by SHIFTBENCH_SEED).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian oracle JSON ({means, variance, class_prior}); enables
    /// batch generation.
    #[arg(long)]
    oracle_spec: Option<PathBuf>,
    /// Test batch size generated at the drawn target prior.
    #[arg(long)]
    n: Option<usize>,
    /// Also generate a validation batch of this size at the oracle's own
    /// class prior.
    #[arg(long)]
    validation_n: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Benchmark config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json, report.csv, and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Thread count for benchmark cells; results are identical for any
    /// value.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Calibrate(args) => cmd_calibrate(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Benchmark(args) => cmd_benchmark(&args),
    };
    match result {
        Ok(stdout_json) => {
            println!("{stdout_json}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn env_seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var("SHIFTBENCH_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::input(format!("SHIFTBENCH_SEED is not a u64: {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn load_calibrator(path: &Path) -> Result<Calibrator, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Calibrator::from_json(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Validation data resolved for estimation: a labeled batch whose
/// posteriors have been calibrated when a calibrator is in play.
struct ValidationContext {
    batch: LabeledBatch,
}

impl ValidationContext {
    fn confusion(&self, mode: ConfusionMode) -> Result<ConfusionMatrix, CliError> {
        estimate_confusion(&self.batch, mode).map_err(|e| CliError::compute(e.to_string()))
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<String, CliError> {
    let calibrator = args
        .calibrator
        .as_ref()
        .map(|p| load_calibrator(p))
        .transpose()?;

    // Test matrix: logits when flagged or when a calibrator is present.
    let test: PosteriorMatrix = if calibrator.is_some() || args.logits {
        let (logits, _) = io::read_logits(&args.test)?;
        match &calibrator {
            Some(c) => apply_calibrator(c, &logits)
                .map_err(|e| CliError::input(format!("{}: {e}", args.test.display())))?,
            None => logits.softmax(),
        }
    } else {
        io::read_posteriors(&args.test)?.0
    };

    // Validation files, if any.
    if args.validation_posteriors.is_some() && args.validation_logits.is_some() {
        return Err(CliError::input(
            "pass either --validation-posteriors or --validation-logits, not both",
        ));
    }
    let validation = match (&args.validation_posteriors, &args.validation_logits) {
        (None, None) => None,
        (posteriors, logits) => {
            let labels_path = args.validation_labels.as_ref().ok_or_else(|| {
                CliError::input("--validation-labels is required with validation matrices")
            })?;
            let batch = if let Some(p) = posteriors {
                io::load_labeled_posteriors(p, labels_path)?
            } else {
                let raw = io::load_labeled_logits(logits.as_ref().unwrap(), labels_path)?;
                match &calibrator {
                    Some(c) => {
                        let calibrated = apply_calibrator(c, raw.logits().unwrap())
                            .map_err(|e| CliError::input(e.to_string()))?;
                        raw.with_posteriors(calibrated)
                            .map_err(|e| CliError::input(e.to_string()))?
                    }
                    None => raw,
                }
            };
            if batch.n_classes() != test.n_classes() {
                return Err(CliError::input(format!(
                    "validation has {} classes but the test file has {}",
                    batch.n_classes(),
                    test.n_classes()
                )));
            }
            Some(ValidationContext { batch })
        }
    };

    // Source prior for estimation: explicit file, else validation counts.
    let explicit_prior = args
        .source_prior
        .as_ref()
        .map(|p| io::read_prior(p))
        .transpose()?;
    if let Some(p) = &explicit_prior {
        if p.len() != test.n_classes() {
            return Err(CliError::input(format!(
                "source prior has {} classes but the test file has {}",
                p.len(),
                test.n_classes()
            )));
        }
    }
    let estimation_prior: Option<ProbabilitySimplex> = match (&explicit_prior, &validation) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(v)) => Some(
            source_prior(&v.batch, WeightConvention::HardCount)
                .map_err(|e| CliError::input(e.to_string()))?,
        ),
        (None, None) => None,
    };
    let need_prior = |estimator: &str| {
        CliError::input(format!(
            "--estimator {estimator} needs --source-prior or validation files"
        ))
    };

    let mut diagnostics: BTreeMap<String, f64> = BTreeMap::new();
    let result: EstimateResult = match args.estimator {
        EstimatorArg::Cc => estimate_cc(&test).map_err(|e| CliError::compute(e.to_string()))?,
        EstimatorArg::Em => {
            let prior = estimation_prior.clone().ok_or_else(|| need_prior("em"))?;
            let init = match (args.em_init, &validation) {
                (Some(EmInitArg::SourcePrior), _) => EmInit::SourcePrior,
                (Some(EmInitArg::SoftMean), None) => {
                    return Err(CliError::input(
                        "--em-init soft-mean needs validation files",
                    ))
                }
                (Some(EmInitArg::SoftMean), Some(_)) => EmInit::SoftMeanValidation,
                (None, Some(_)) => EmInit::SoftMeanValidation,
                (None, None) => EmInit::SourcePrior,
            };
            let cfg = EmConfig {
                init,
                tol: args.em_tol,
                max_iter: args.em_max_iter,
            };
            estimate_em(
                &test,
                &prior,
                &cfg,
                validation.as_ref().map(|v| v.batch.posteriors()),
            )
            .map_err(|e| CliError::compute(e.to_string()))?
        }
        EstimatorArg::Bbsl | EstimatorArg::RllsHard | EstimatorArg::Rlls => {
            let validation = validation.as_ref().ok_or_else(|| {
                CliError::input("confusion-matrix estimators need validation files")
            })?;
            let prior = estimation_prior
                .clone()
                .ok_or_else(|| need_prior("confusion-matrix estimators"))?;
            let (mode, mean_mode) = match args.estimator {
                EstimatorArg::Rlls => (ConfusionMode::Soft, MeanMode::Soft),
                _ => (ConfusionMode::Hard, MeanMode::Hard),
            };
            let confusion = validation.confusion(mode)?;
            diagnostics.insert(
                "confusion_condition_number".to_string(),
                confusion.condition_number(),
            );
            let u_hat = mean_prediction(&test, mean_mode);
            let weights = match args.estimator {
                EstimatorArg::Bbsl => estimate_bbsl(&confusion, &u_hat, &prior),
                _ => {
                    let cfg = RllsConfig {
                        alpha: args.rlls_alpha,
                        delta: args.rlls_delta,
                        lambda_override: args.rlls_lambda,
                    };
                    estimate_rlls(&confusion, &u_hat, &prior, &cfg)
                }
            }
            .map_err(|e| CliError::compute(e.to_string()))?;
            let distribution = weights
                .implied_distribution(&prior)
                .map_err(|e| CliError::compute(e.to_string()))?;
            EstimateResult {
                distribution,
                iterations: 0,
                tau_used: None,
                diagnostics: BTreeMap::new(),
            }
        }
        EstimatorArg::Leip => {
            let prior = estimation_prior.clone().ok_or_else(|| need_prior("leip"))?;
            let tau = match args.tau {
                Some(t) => TauRule::Explicit(t),
                None => TauRule::Auto,
            };
            let confusion = match (&tau, &validation) {
                (TauRule::Auto, None) => {
                    return Err(CliError::input(
                        "leip with automatic tau needs validation files to estimate the confusion matrix",
                    ))
                }
                (TauRule::Auto, Some(v)) => Some(v.confusion(ConfusionMode::Hard)?),
                (TauRule::Explicit(_), _) => None,
            };
            let cfg = LeipConfig {
                tau,
                smoothing: match args.smoothing_floor {
                    Some(eps) => Smoothing::Floor(eps),
                    None => Smoothing::None,
                },
            };
            estimate_leip(&test, &prior, &cfg, confusion.as_ref())
                .map_err(|e| CliError::compute(e.to_string()))?
        }
    };
    diagnostics.extend(result.diagnostics.clone());
    diagnostics.insert("n_test".to_string(), test.n_rows() as f64);

    // Weights under every source prior we can compute.
    let mut weights = serde_json::Map::new();
    if let Some(p) = &explicit_prior {
        let w =
            weights_from(&result.distribution, p).map_err(|e| CliError::compute(e.to_string()))?;
        weights.insert("source-prior".to_string(), json!(w.weights()));
    }
    if let Some(v) = &validation {
        for (name, convention) in [
            ("soft-mean", WeightConvention::SoftMean),
            ("hard-count", WeightConvention::HardCount),
        ] {
            let prior =
                source_prior(&v.batch, convention).map_err(|e| CliError::compute(e.to_string()))?;
            let w = weights_from(&result.distribution, &prior)
                .map_err(|e| CliError::compute(e.to_string()))?;
            weights.insert(name.to_string(), json!(w.weights()));
        }
    }

    let estimator_name = match args.estimator {
        EstimatorArg::Cc => "cc",
        EstimatorArg::Em => "em",
        EstimatorArg::Bbsl => "bbsl",
        EstimatorArg::Rlls => "rlls",
        EstimatorArg::RllsHard => "rlls-hard",
        EstimatorArg::Leip => "leip",
    };
    let output = json!({
        "estimator": estimator_name,
        "distribution": result.distribution.probs(),
        "iterations": result.iterations,
        "tau_used": result.tau_used,
        "weights": weights,
        "diagnostics": diagnostics,
    });

    RunManifest::new(
        "estimate",
        json!({
            "estimator": estimator_name,
            "logits": args.logits,
            "tau": args.tau,
            "smoothing_floor": args.smoothing_floor,
            "em_tol": args.em_tol,
            "em_max_iter": args.em_max_iter,
            "rlls_lambda": args.rlls_lambda,
            "rlls_alpha": args.rlls_alpha,
            "rlls_delta": args.rlls_delta,
        }),
    )
    .input(&args.test)?
    .input_opt(args.calibrator.as_ref())?
    .input_opt(args.source_prior.as_ref())?
    .input_opt(args.validation_posteriors.as_ref())?
    .input_opt(args.validation_logits.as_ref())?
    .input_opt(args.validation_labels.as_ref())?
    .write(&args.out_dir)?;

    Ok(serde_json::to_string_pretty(&output).expect("output serializes"))
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<String, CliError> {
    let batch = io::load_labeled_logits(&args.logits, &args.labels)?;
    let mut distinct = batch.labels().to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(CliError::input(format!(
            "{}: need at least 2 distinct labels, found {}",
            args.labels.display(),
            distinct.len()
        )));
    }
    if args.bins == 0 {
        return Err(CliError::input("--bins must be at least 1"));
    }

    let (calibrator, report) = fit_calibrator_with_bins(args.method.kind(), &batch, args.bins)
        .map_err(|e| CliError::compute(e.to_string()))?;

    if let Some(path) = &args.calibrator_out {
        io::write_file(path, &calibrator.to_json())?;
    }

    let output = json!({
        "calibrator": calibrator,
        "report": report,
    });

    RunManifest::new(
        "calibrate",
        json!({
            "method": match args.method {
                MethodArg::Ts => "ts",
                MethodArg::Bcts => "bcts",
                MethodArg::Vs => "vs",
                MethodArg::Nbvs => "nbvs",
            },
            "bins": args.bins,
        }),
    )
    .input(&args.logits)?
    .input(&args.labels)?
    .write(&args.out_dir)?;

    Ok(serde_json::to_string_pretty(&output).expect("output serializes"))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let seed = env_seed_override()?.unwrap_or(args.seed);
    let oracle = args
        .oracle_spec
        .as_ref()
        .map(|p| -> Result<GaussianOracle, CliError> {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::input(format!("{}: {e}", p.display())))
        })
        .transpose()?;

    let classes = match (args.classes, &oracle) {
        (Some(m), Some(o)) if m != o.n_classes() => {
            return Err(CliError::input(format!(
                "--classes {m} disagrees with the oracle's {} classes",
                o.n_classes()
            )))
        }
        (Some(m), _) => m,
        (None, Some(o)) => o.n_classes(),
        (None, None) => {
            return Err(CliError::input(
                "--classes is required without --oracle-spec",
            ))
        }
    };

    let target = sample_dirichlet_prior(args.alpha, classes, seed)
        .map_err(|e| CliError::input(e.to_string()))?;

    let mut n_total = 0;
    if let Some(oracle) = &oracle {
        let n = args.n.ok_or_else(|| {
            CliError::input("--n is required when generating batches from --oracle-spec")
        })?;
        n_total = n;
        std::fs::create_dir_all(&args.out_dir)
            .map_err(|e| CliError::input(format!("{}: {e}", args.out_dir.display())))?;
        let test = oracle_generate(oracle, &target, n, derive_seed(seed, 1, 0))
            .map_err(|e| CliError::compute(e.to_string()))?;
        io::write_file(
            &args.out_dir.join("test_posteriors.csv"),
            &io::format_rows(test.posteriors().rows_iter()),
        )?;
        io::write_file(
            &args.out_dir.join("test_logits.csv"),
            &io::format_rows(test.logits().unwrap().rows_iter()),
        )?;
        io::write_file(
            &args.out_dir.join("test_labels.csv"),
            &io::format_labels(test.labels()),
        )?;
        if let Some(vn) = args.validation_n {
            let validation =
                oracle_generate(oracle, oracle.class_prior(), vn, derive_seed(seed, 2, 0))
                    .map_err(|e| CliError::compute(e.to_string()))?;
            io::write_file(
                &args.out_dir.join("validation_posteriors.csv"),
                &io::format_rows(validation.posteriors().rows_iter()),
            )?;
            io::write_file(
                &args.out_dir.join("validation_logits.csv"),
                &io::format_rows(validation.logits().unwrap().rows_iter()),
            )?;
            io::write_file(
                &args.out_dir.join("validation_labels.csv"),
                &io::format_labels(validation.labels()),
            )?;
        }
    }

    let record = ScenarioRecord {
        alpha: args.alpha,
        seed,
        target_prior: target,
        n_total,
    };
    let scenario_json = serde_json::to_string_pretty(&record).expect("scenario serializes");
    if oracle.is_some() {
        io::write_file(&args.out_dir.join("scenario.json"), &scenario_json)?;
    }

    RunManifest::new(
        "simulate",
        json!({
            "alpha": args.alpha,
            "classes": classes,
            "n": args.n,
            "validation_n": args.validation_n,
        }),
    )
    .seed("base_seed", seed)
    .input_opt(args.oracle_spec.as_ref())?
    .write(&args.out_dir)?;

    Ok(scenario_json)
}

fn default_convention() -> WeightConvention {
    WeightConvention::SoftMean
}

/// On-disk benchmark config: the sweep parameters plus a data source.
/// Fields are spelled out (rather than flattening the library config) so
/// deserialization errors point at the exact offending field.
#[derive(Debug, Serialize, Deserialize)]
struct BenchmarkFileConfig {
    alphas: Vec<f64>,
    runs_per_alpha: usize,
    estimators: Vec<EstimatorChoice>,
    calibrations: Vec<CalibratorKind>,
    base_seed: u64,
    validation_size: usize,
    #[serde(default = "default_convention")]
    convention: WeightConvention,
    data: DataSpec,
}

impl BenchmarkFileConfig {
    fn sweep(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            alphas: self.alphas.clone(),
            runs_per_alpha: self.runs_per_alpha,
            estimators: self.estimators.clone(),
            calibrations: self.calibrations.clone(),
            base_seed: self.base_seed,
            validation_size: self.validation_size,
            convention: self.convention,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DataSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    oracle: Option<GaussianOracle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pool_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels_csv: Option<PathBuf>,
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<String, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::input(format!("{}: {e}", args.config.display())))?;
    let mut deserializer = serde_json::Deserializer::from_str(&text);
    let mut file_config: BenchmarkFileConfig = serde_path_to_error::deserialize(&mut deserializer)
        .map_err(|e| {
            CliError::input(format!(
                "{}: at /{}: {}",
                args.config.display(),
                e.path().to_string().replace('.', "/"),
                e.inner()
            ))
        })?;

    if let Some(seed) = env_seed_override()? {
        file_config.base_seed = seed;
    }
    let sweep = file_config.sweep();
    sweep
        .validate()
        .map_err(|e| CliError::input(format!("{}: {e}", args.config.display())))?;

    let data = match (&file_config.data.oracle, &file_config.data.logits_csv) {
        (Some(oracle), None) => {
            let pool_size = file_config.data.pool_size.ok_or_else(|| {
                CliError::input(format!(
                    "{}: at /data/pool_size: required with an oracle data source",
                    args.config.display()
                ))
            })?;
            BenchmarkData::Oracle {
                oracle: oracle.clone(),
                pool_size,
            }
        }
        (None, Some(logits_csv)) => {
            let labels_csv = file_config.data.labels_csv.as_ref().ok_or_else(|| {
                CliError::input(format!(
                    "{}: at /data/labels_csv: required with a CSV data source",
                    args.config.display()
                ))
            })?;
            BenchmarkData::Ingested(io::load_labeled_logits(logits_csv, labels_csv)?)
        }
        (Some(_), Some(_)) => {
            return Err(CliError::input(format!(
                "{}: at /data: give either an oracle or CSV paths, not both",
                args.config.display()
            )))
        }
        (None, None) => {
            return Err(CliError::input(format!(
                "{}: at /data: an oracle or logits_csv/labels_csv data source is required",
                args.config.display()
            )))
        }
    };

    let run = || run_benchmark(&sweep, &data);
    let report = match args.jobs {
        Some(jobs) => {
            if jobs == 0 {
                return Err(CliError::input("--jobs must be at least 1"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| CliError::compute(e.to_string()))?
                .install(run)
        }
        None => run(),
    }
    .map_err(|e| CliError::compute(e.to_string()))?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::input(format!("{}: {e}", args.out.display())))?;
    let report_json = report.to_json();
    io::write_file(&args.out.join("report.json"), &report_json)?;
    io::write_file(&args.out.join("report.csv"), &report.to_csv())?;

    RunManifest::new(
        "benchmark",
        serde_json::to_value(&file_config).expect("config serializes"),
    )
    .seed("base_seed", file_config.base_seed)
    .input(&args.config)?
    .input_opt(file_config.data.logits_csv.as_ref())?
    .input_opt(file_config.data.labels_csv.as_ref())?
    .write(&args.out)?;

    Ok(report_json)
}
