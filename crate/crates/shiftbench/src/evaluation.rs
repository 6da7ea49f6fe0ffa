//! Weight conventions, error metrics, adaptation metrics, and the
//! Dirichlet-shift benchmark orchestrator.
//!
//! The benchmark protocol, per (alpha, run) cell: draw a target prior from
//! Dir(alpha), realize it by subsampling the labeled pool without
//! replacement at the largest feasible size, run every configured estimator
//! on the (optionally calibrated) test posteriors, and score each against
//! the realized shift weights by mean squared error. Estimation always uses
//! the hard-count validation label distribution as its source prior; the
//! configured [`WeightConvention`] only decides which source prior divides
//! distributions into weights, so switching conventions never changes an
//! estimated distribution.
//!
//! Reports are fully determined by the config and base seed: per-run seeds
//! are derived by hashing (base_seed, alpha_index, run_index), cells run
//! independently (optionally in parallel), and aggregation is
//! order-independent.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{apply_calibrator, fit_calibrator, Calibrator, CalibratorKind};
use crate::error::{Result, ShiftError};
use crate::estimators::{
    estimate_bbsl, estimate_cc, estimate_em, estimate_leip, estimate_rlls, mean_prediction,
    EmConfig, EmInit, LeipConfig, MeanMode, RllsConfig,
};
use crate::prob::{
    argmax, prior_update_into, ConfusionMatrix, LabeledBatch, PosteriorMatrix, ProbabilitySimplex,
    ShiftWeights,
};
use crate::rng::{derive_seed, SplitMix64};
use crate::simulation::{
    estimate_confusion, oracle_generate, sample_dirichlet_prior, subsample_without_replacement,
    ConfusionMode, GaussianOracle,
};

/// How a source prior is read off a validation batch when converting
/// distributions to weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightConvention {
    /// Column means of the validation posteriors.
    SoftMean,
    /// Empirical label frequencies.
    HardCount,
}

/// Source class prior of a validation batch under a convention.
///
/// Under `HardCount`, classes absent from the labels are floored at
/// 1/(2 N_v) and the vector renormalized so downstream weight divisions
/// stay finite.
pub fn source_prior(
    validation: &LabeledBatch,
    convention: WeightConvention,
) -> Result<ProbabilitySimplex> {
    match convention {
        WeightConvention::SoftMean => Ok(validation.posteriors().column_means()),
        WeightConvention::HardCount => {
            let n = validation.len() as f64;
            let raw: Vec<f64> = validation
                .label_counts()
                .iter()
                .map(|&c| {
                    if c == 0 {
                        1.0 / (2.0 * n)
                    } else {
                        c as f64 / n
                    }
                })
                .collect();
            ProbabilitySimplex::from_unnormalized(raw)
        }
    }
}

/// Elementwise prevalence ratio distribution / source_prior.
pub fn weights_from(
    distribution: &ProbabilitySimplex,
    source_prior: &ProbabilitySimplex,
) -> Result<ShiftWeights> {
    if distribution.len() != source_prior.len() {
        return Err(ShiftError::DimensionMismatch {
            expected: distribution.len(),
            actual: source_prior.len(),
        });
    }
    if let Some(i) = source_prior.probs().iter().position(|&p| p <= 0.0) {
        return Err(ShiftError::ZeroSourceEntry(i));
    }
    let w: Vec<f64> = distribution
        .probs()
        .iter()
        .zip(source_prior.probs())
        .map(|(&t, &s)| t / s)
        .collect();
    ShiftWeights::new(w, source_prior)
}

/// Mean squared error between weight vectors: (1/m) sum (est_i - true_i)^2.
pub fn mse_weights(estimated: &ShiftWeights, truth: &ShiftWeights) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(ShiftError::DimensionMismatch {
            expected: truth.len(),
            actual: estimated.len(),
        });
    }
    let m = estimated.len() as f64;
    Ok(estimated
        .weights()
        .iter()
        .zip(truth.weights())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / m)
}

/// Accuracy and macro recall before and after adapting posteriors with
/// estimated shift weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptationMetrics {
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub macro_recall_before: f64,
    pub macro_recall_after: f64,
}

fn accuracy_and_macro_recall(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> (f64, f64) {
    let mut support = vec![0usize; classes];
    let mut hits = vec![0usize; classes];
    let mut correct = 0usize;
    for (&pred, &label) in predictions.iter().zip(labels) {
        support[label] += 1;
        if pred == label {
            hits[label] += 1;
            correct += 1;
        }
    }
    let accuracy = correct as f64 / labels.len() as f64;
    // Classes without test support are excluded from the macro average.
    let mut recall_total = 0.0;
    let mut present = 0usize;
    for (h, s) in hits.iter().zip(&support) {
        if *s > 0 {
            recall_total += *h as f64 / *s as f64;
            present += 1;
        }
    }
    (accuracy, recall_total / present as f64)
}

/// Classifier adaptation check: "after" metrics come from re-labeling each
/// row by the weight-scaled posterior (the prior-update ratio replaced by
/// the estimated weights). `source` is the prior the weights were derived
/// against; it must be strictly positive and consistent with them.
pub fn adaptation_metrics(
    test: &LabeledBatch,
    weights: &ShiftWeights,
    source: &ProbabilitySimplex,
) -> Result<AdaptationMetrics> {
    if weights.len() != test.n_classes() {
        return Err(ShiftError::DimensionMismatch {
            expected: test.n_classes(),
            actual: weights.len(),
        });
    }
    if let Some(i) = source.probs().iter().position(|&p| p <= 0.0) {
        return Err(ShiftError::ZeroSourceEntry(i));
    }
    // Re-validate the (weights, source) pairing.
    ShiftWeights::new(weights.weights().to_vec(), source)?;

    let m = test.n_classes();
    let mut updated = vec![0.0; m];
    let mut before = Vec::with_capacity(test.len());
    let mut after = Vec::with_capacity(test.len());
    for (k, row) in test.posteriors().rows_iter().enumerate() {
        before.push(argmax(row));
        prior_update_into(row, weights.weights(), &mut updated).map_err(|e| e.at_row(k))?;
        after.push(argmax(&updated));
    }
    let (accuracy_before, macro_recall_before) =
        accuracy_and_macro_recall(&before, test.labels(), m);
    let (accuracy_after, macro_recall_after) = accuracy_and_macro_recall(&after, test.labels(), m);
    Ok(AdaptationMetrics {
        accuracy_before,
        accuracy_after,
        macro_recall_before,
        macro_recall_after,
    })
}

/// Estimators the benchmark can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    Cc,
    Em,
    Bbsl,
    Rlls,
    RllsHard,
    Leip,
}

impl EstimatorChoice {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorChoice::Cc => "cc",
            EstimatorChoice::Em => "em",
            EstimatorChoice::Bbsl => "bbsl",
            EstimatorChoice::Rlls => "rlls",
            EstimatorChoice::RllsHard => "rlls-hard",
            EstimatorChoice::Leip => "leip",
        }
    }
}

fn default_convention() -> WeightConvention {
    WeightConvention::SoftMean
}

/// Benchmark sweep configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub alphas: Vec<f64>,
    pub runs_per_alpha: usize,
    pub estimators: Vec<EstimatorChoice>,
    pub calibrations: Vec<CalibratorKind>,
    pub base_seed: u64,
    pub validation_size: usize,
    #[serde(default = "default_convention")]
    pub convention: WeightConvention,
}

impl BenchmarkConfig {
    /// Parameter sanity checks; run automatically by [`run_benchmark`] and
    /// available to front ends that want to reject a config at parse time.
    pub fn validate(&self) -> Result<()> {
        if self.runs_per_alpha == 0 {
            return Err(ShiftError::InvalidParameter {
                name: "runs_per_alpha",
                value: 0.0,
            });
        }
        if self.alphas.is_empty() || self.estimators.is_empty() || self.calibrations.is_empty() {
            return Err(ShiftError::EmptyInput);
        }
        for &a in &self.alphas {
            if !(a > 0.0 && a.is_finite()) {
                return Err(ShiftError::InvalidAlpha(a));
            }
        }
        if self.validation_size == 0 {
            return Err(ShiftError::InvalidParameter {
                name: "validation_size",
                value: 0.0,
            });
        }
        Ok(())
    }

    /// FNV-1a hash of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Where benchmark data comes from.
#[derive(Debug, Clone)]
pub enum BenchmarkData {
    /// Generate a pool and validation split from a Gaussian oracle at its
    /// own class prior.
    Oracle {
        oracle: GaussianOracle,
        pool_size: usize,
    },
    /// Use an ingested labeled batch; a seeded shuffle takes
    /// `validation_size` samples for validation and leaves the rest as the
    /// test pool.
    Ingested(LabeledBatch),
}

/// One estimator's outcome on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub n_test: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau_used: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// All runs for one (alpha, estimator, calibration) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub alpha: f64,
    pub calibration: String,
    pub estimator: String,
    /// Arithmetic mean of the successful per-run MSEs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_mse: Option<f64>,
    /// Population standard deviation of the successful per-run MSEs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_mse: Option<f64>,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub base_seed: u64,
    pub config_digest: String,
    pub library_version: String,
    pub classes: usize,
    pub pool_size: usize,
    pub validation_size: usize,
    pub convention: WeightConvention,
}

/// Benchmark output. Serialization is byte-deterministic for a given
/// config and seed; timestamps belong to run manifests, not reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub metadata: ReportMetadata,
    /// MSE values are stored unscaled; multiply by 1e3 to compare with
    /// tables quoted on the 1e-3 scale.
    pub scale_note: String,
    pub cells: Vec<ReportCell>,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat CSV: alpha,run,estimator,calibration,mse,n_test,tau_used.
    /// Failed cells leave mse empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,run,estimator,calibration,mse,n_test,tau_used\n");
        for cell in &self.cells {
            for run in &cell.runs {
                let mse = run.mse.map(|v| v.to_string()).unwrap_or_default();
                let tau = run.tau_used.map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    cell.alpha, run.run, cell.estimator, cell.calibration, mse, run.n_test, tau
                ));
            }
        }
        out
    }

    pub fn cell(&self, alpha: f64, estimator: &str, calibration: &str) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.alpha == alpha && c.estimator == estimator && c.calibration == calibration)
    }
}

/// Per-calibration context precomputed once per sweep: the fitted
/// calibrator applied to the validation set and the whole pool, plus the
/// confusion matrices and the soft-mean source prior.
struct CalibrationContext {
    pool_posteriors: PosteriorMatrix,
    validation_posteriors: PosteriorMatrix,
    confusion_hard: ConfusionMatrix,
    confusion_soft: ConfusionMatrix,
    source_soft_mean: ProbabilitySimplex,
}

// Seed stream tags; keep stable or previously published reports change.
const STREAM_VALIDATION: u64 = 0xA1;
const STREAM_POOL: u64 = 0xA2;
const STREAM_SPLIT: u64 = 0xA3;
const STREAM_PRIOR: u64 = 0xB1;
const STREAM_SUBSAMPLE: u64 = 0xB2;

/// Run the full sweep. Setup failures (data generation, calibrator fits,
/// confusion estimation) propagate; failures inside an (estimator, run)
/// cell are recorded in that cell's [`RunRecord`] without aborting.
pub fn run_benchmark(cfg: &BenchmarkConfig, data: &BenchmarkData) -> Result<BenchmarkReport> {
    cfg.validate()?;

    let (pool, validation) = match data {
        BenchmarkData::Oracle { oracle, pool_size } => {
            if *pool_size == 0 {
                return Err(ShiftError::EmptyBatch);
            }
            let validation = oracle_generate(
                oracle,
                oracle.class_prior(),
                cfg.validation_size,
                derive_seed(cfg.base_seed, STREAM_VALIDATION, 0),
            )?;
            let pool = oracle_generate(
                oracle,
                oracle.class_prior(),
                *pool_size,
                derive_seed(cfg.base_seed, STREAM_POOL, 0),
            )?;
            (pool, validation)
        }
        BenchmarkData::Ingested(batch) => {
            if cfg.validation_size >= batch.len() {
                return Err(ShiftError::InvalidParameter {
                    name: "validation_size",
                    value: cfg.validation_size as f64,
                });
            }
            let mut rng = SplitMix64::new(derive_seed(cfg.base_seed, STREAM_SPLIT, 0));
            let perm = rng.sample_without_replacement(batch.len(), batch.len());
            let validation = batch.select(&perm[..cfg.validation_size])?;
            let pool = batch.select(&perm[cfg.validation_size..])?;
            (pool, validation)
        }
    };

    let classes = pool.n_classes();
    let source_hard = source_prior(&validation, WeightConvention::HardCount)?;
    let pool_logits = pool.logits_or_log_posteriors()?;
    let validation_logits = validation.logits_or_log_posteriors()?;

    let mut contexts = Vec::with_capacity(cfg.calibrations.len());
    for &kind in &cfg.calibrations {
        let calibrator = if kind == CalibratorKind::Identity {
            Calibrator::identity()
        } else {
            fit_calibrator(kind, &validation)?.0
        };
        let validation_posteriors = apply_calibrator(&calibrator, &validation_logits)?;
        let validation_batch = validation.with_posteriors(validation_posteriors.clone())?;
        let confusion_hard = estimate_confusion(&validation_batch, ConfusionMode::Hard)?;
        let confusion_soft = estimate_confusion(&validation_batch, ConfusionMode::Soft)?;
        let source_soft_mean = validation_posteriors.column_means();
        let pool_posteriors = apply_calibrator(&calibrator, &pool_logits)?;
        contexts.push(CalibrationContext {
            pool_posteriors,
            validation_posteriors,
            confusion_hard,
            confusion_soft,
            source_soft_mean,
        });
    }

    let cells: Vec<(usize, usize)> = (0..cfg.alphas.len())
        .flat_map(|a| (0..cfg.runs_per_alpha).map(move |r| (a, r)))
        .collect();

    let outcomes: Vec<RunOutcome> = cells
        .par_iter()
        .map(|&(alpha_idx, run_idx)| {
            run_cell(
                cfg,
                &pool,
                &contexts,
                &source_hard,
                classes,
                alpha_idx,
                run_idx,
            )
        })
        .collect();

    // Regroup (alpha, run) outcomes into (alpha, calibration, estimator)
    // cells; ordering is fixed by the config, not by execution order.
    let mut grouped: BTreeMap<(usize, usize, usize), Vec<RunRecord>> = BTreeMap::new();
    for outcome in outcomes {
        for entry in outcome.entries {
            grouped
                .entry((
                    outcome.alpha_idx,
                    entry.calibration_idx,
                    entry.estimator_idx,
                ))
                .or_default()
                .push(RunRecord {
                    run: outcome.run_idx,
                    seed: outcome.seed,
                    n_test: outcome.n_test,
                    mse: entry.mse,
                    tau_used: entry.tau_used,
                    error: entry.error,
                });
        }
    }

    let mut report_cells = Vec::with_capacity(grouped.len());
    for ((alpha_idx, cal_idx, est_idx), mut runs) in grouped {
        runs.sort_by_key(|r| r.run);
        let values: Vec<f64> = runs.iter().filter_map(|r| r.mse).collect();
        let (mean, std) = if values.is_empty() {
            (None, None)
        } else {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
            (Some(mean), Some(var.sqrt()))
        };
        report_cells.push(ReportCell {
            alpha: cfg.alphas[alpha_idx],
            calibration: cfg.calibrations[cal_idx].name().to_string(),
            estimator: cfg.estimators[est_idx].name().to_string(),
            mean_mse: mean,
            std_mse: std,
            runs,
        });
    }

    Ok(BenchmarkReport {
        metadata: ReportMetadata {
            base_seed: cfg.base_seed,
            config_digest: cfg.digest(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            classes,
            pool_size: pool.len(),
            validation_size: validation.len(),
            convention: cfg.convention,
        },
        scale_note: "mse values are unscaled; multiply by 1e3 for tables quoted at the 1e-3 scale"
            .to_string(),
        cells: report_cells,
    })
}

struct RunOutcome {
    alpha_idx: usize,
    run_idx: usize,
    seed: u64,
    n_test: usize,
    entries: Vec<RunEntry>,
}

struct RunEntry {
    calibration_idx: usize,
    estimator_idx: usize,
    mse: Option<f64>,
    tau_used: Option<f64>,
    error: Option<String>,
}

fn run_cell(
    cfg: &BenchmarkConfig,
    pool: &LabeledBatch,
    contexts: &[CalibrationContext],
    source_hard: &ProbabilitySimplex,
    classes: usize,
    alpha_idx: usize,
    run_idx: usize,
) -> RunOutcome {
    let seed = derive_seed(cfg.base_seed, alpha_idx as u64, run_idx as u64);
    let mut outcome = RunOutcome {
        alpha_idx,
        run_idx,
        seed,
        n_test: 0,
        entries: Vec::new(),
    };

    let setup = (|| -> Result<(Vec<usize>, ProbabilitySimplex)> {
        let target = sample_dirichlet_prior(
            cfg.alphas[alpha_idx],
            classes,
            derive_seed(seed, STREAM_PRIOR, 0),
        )?;
        let indices = subsample_without_replacement(
            pool.labels(),
            &target,
            derive_seed(seed, STREAM_SUBSAMPLE, 0),
        )?;
        if indices.is_empty() {
            return Err(ShiftError::EmptyBatch);
        }
        let mut counts = vec![0usize; classes];
        for &i in &indices {
            counts[pool.labels()[i]] += 1;
        }
        let realized = ProbabilitySimplex::from_counts(&counts)?;
        Ok((indices, realized))
    })();

    let (indices, realized) = match setup {
        Ok(v) => v,
        Err(e) => {
            // The whole run failed before any estimator saw data; record
            // the error in every cell it covers.
            for cal_idx in 0..contexts.len() {
                for est_idx in 0..cfg.estimators.len() {
                    outcome.entries.push(RunEntry {
                        calibration_idx: cal_idx,
                        estimator_idx: est_idx,
                        mse: None,
                        tau_used: None,
                        error: Some(e.to_string()),
                    });
                }
            }
            return outcome;
        }
    };
    outcome.n_test = indices.len();

    for (cal_idx, ctx) in contexts.iter().enumerate() {
        let test = match ctx.pool_posteriors.select(&indices) {
            Ok(t) => t,
            Err(e) => {
                for est_idx in 0..cfg.estimators.len() {
                    outcome.entries.push(RunEntry {
                        calibration_idx: cal_idx,
                        estimator_idx: est_idx,
                        mse: None,
                        tau_used: None,
                        error: Some(e.to_string()),
                    });
                }
                continue;
            }
        };
        let source_conv = match cfg.convention {
            WeightConvention::SoftMean => &ctx.source_soft_mean,
            WeightConvention::HardCount => source_hard,
        };
        let truth = weights_from(&realized, source_conv);
        for (est_idx, &estimator) in cfg.estimators.iter().enumerate() {
            let result = truth.as_ref().map_err(|e| e.clone()).and_then(|truth| {
                let (weights, tau_used) =
                    estimate_weights(estimator, &test, ctx, source_hard, source_conv)?;
                Ok((mse_weights(&weights, truth)?, tau_used))
            });
            match result {
                Ok((mse, tau_used)) => outcome.entries.push(RunEntry {
                    calibration_idx: cal_idx,
                    estimator_idx: est_idx,
                    mse: Some(mse),
                    tau_used,
                    error: None,
                }),
                Err(e) => outcome.entries.push(RunEntry {
                    calibration_idx: cal_idx,
                    estimator_idx: est_idx,
                    mse: None,
                    tau_used: None,
                    error: Some(e.to_string()),
                }),
            }
        }
    }
    outcome
}

/// Run one estimator and convert its output to shift weights under the
/// conversion source prior. Estimation itself always uses the hard-count
/// source prior.
fn estimate_weights(
    estimator: EstimatorChoice,
    test: &PosteriorMatrix,
    ctx: &CalibrationContext,
    source_hard: &ProbabilitySimplex,
    source_conv: &ProbabilitySimplex,
) -> Result<(ShiftWeights, Option<f64>)> {
    match estimator {
        EstimatorChoice::Cc => {
            let result = estimate_cc(test)?;
            Ok((weights_from(&result.distribution, source_conv)?, None))
        }
        EstimatorChoice::Em => {
            let cfg = EmConfig {
                init: EmInit::SoftMeanValidation,
                ..EmConfig::default()
            };
            let result = estimate_em(test, source_hard, &cfg, Some(&ctx.validation_posteriors))?;
            Ok((weights_from(&result.distribution, source_conv)?, None))
        }
        EstimatorChoice::Bbsl => {
            let u_hat = mean_prediction(test, MeanMode::Hard);
            let w = estimate_bbsl(&ctx.confusion_hard, &u_hat, source_hard)?;
            Ok((w, None))
        }
        EstimatorChoice::Rlls => {
            let u_hat = mean_prediction(test, MeanMode::Soft);
            let w = estimate_rlls(
                &ctx.confusion_soft,
                &u_hat,
                source_hard,
                &RllsConfig::default(),
            )?;
            Ok((w, None))
        }
        EstimatorChoice::RllsHard => {
            let u_hat = mean_prediction(test, MeanMode::Hard);
            let w = estimate_rlls(
                &ctx.confusion_hard,
                &u_hat,
                source_hard,
                &RllsConfig::default(),
            )?;
            Ok((w, None))
        }
        EstimatorChoice::Leip => {
            let result = estimate_leip(
                test,
                source_hard,
                &LeipConfig::default(),
                Some(&ctx.confusion_hard),
            )?;
            Ok((
                weights_from(&result.distribution, source_conv)?,
                result.tau_used,
            ))
        }
    }
}
