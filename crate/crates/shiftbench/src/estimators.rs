//! Label shift estimators.
//!
//! Five ways to estimate the class prevalence of an unlabeled test batch
//! from a black-box classifier's posteriors:
//!
//! * [`estimate_cc`]   — classify-and-count: the frequency of top labels.
//! * [`estimate_em`]   — alternate per-sample prior updates with posterior
//!   averaging until the estimated prior stops moving.
//! * [`estimate_bbsl`] — invert the joint confusion matrix against the mean
//!   test prediction.
//! * [`estimate_rlls`] — the same moment matching with a ridge penalty
//!   shrinking toward the no-shift solution.
//! * [`estimate_leip`] — incremental prior update: seed a label pool from
//!   the high-confidence subset, fold in the remaining samples one at a
//!   time in descending confidence, re-updating each with the pool's
//!   current distribution, then re-label the whole batch with the final
//!   estimate.
//!
//! Argmax ties break toward the lowest class index everywhere, and LEIP's
//! confidence sort is stable (descending max probability, original row
//! index ascending), so every estimator is deterministic.

use std::collections::BTreeMap;

use crate::error::{Result, ShiftError};
use crate::linalg;
use crate::prob::{
    argmax, prior_ratio, prior_update_into, ConfusionKind, ConfusionMatrix, PosteriorMatrix,
    ProbabilitySimplex, ShiftWeights,
};

/// Initialization of the EM prior iterate.
#[derive(Debug, Clone, PartialEq)]
pub enum EmInit {
    /// Start from the source prior.
    SourcePrior,
    /// Start from the column means of a validation posterior matrix.
    SoftMeanValidation,
    /// Start from a caller-supplied distribution.
    Explicit(ProbabilitySimplex),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub init: EmInit,
    /// L1 convergence threshold on successive prior iterates.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            init: EmInit::SoftMeanValidation,
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

impl EmConfig {
    /// Default configuration with the initialization picked by whether a
    /// validation matrix is available.
    pub fn auto(has_validation: bool) -> Self {
        Self {
            init: if has_validation {
                EmInit::SoftMeanValidation
            } else {
                EmInit::SourcePrior
            },
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(ShiftError::InvalidParameter {
                name: "tol",
                value: self.tol,
            });
        }
        if self.max_iter == 0 {
            return Err(ShiftError::InvalidParameter {
                name: "max_iter",
                value: 0.0,
            });
        }
        Ok(())
    }
}

/// How LEIP's confidence threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauRule {
    /// Minimum-recall percentile rule from a validation confusion matrix.
    Auto,
    /// A fixed threshold in (0, 1].
    Explicit(f64),
}

/// Handling of classes absent from LEIP's confident label pool. Without
/// smoothing a zero pool entry pins that class's updated posterior at zero
/// for the rest of the pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    None,
    /// Floor the pool distribution at epsilon (then renormalize) whenever
    /// it is used as an update target.
    Floor(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeipConfig {
    pub tau: TauRule,
    pub smoothing: Smoothing,
}

impl Default for LeipConfig {
    fn default() -> Self {
        Self {
            tau: TauRule::Auto,
            smoothing: Smoothing::None,
        }
    }
}

impl LeipConfig {
    fn validate(&self, classes: usize) -> Result<()> {
        if let TauRule::Explicit(tau) = self.tau {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(ShiftError::InvalidParameter {
                    name: "tau",
                    value: tau,
                });
            }
        }
        if let Smoothing::Floor(eps) = self.smoothing {
            if !(eps > 0.0 && eps < 1.0 / classes as f64) {
                return Err(ShiftError::InvalidParameter {
                    name: "smoothing_floor",
                    value: eps,
                });
            }
        }
        Ok(())
    }
}

/// RLLS regularization parameters. `lambda_override` pins the ridge weight
/// directly; otherwise lambda defaults to `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RllsConfig {
    pub alpha: f64,
    pub delta: f64,
    pub lambda_override: Option<f64>,
}

impl Default for RllsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            delta: 0.05,
            lambda_override: None,
        }
    }
}

impl RllsConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ShiftError::InvalidParameter {
                name: "alpha",
                value: self.alpha,
            });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(ShiftError::InvalidParameter {
                name: "delta",
                value: self.delta,
            });
        }
        if let Some(l) = self.lambda_override {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(ShiftError::InvalidParameter {
                    name: "lambda_override",
                    value: l,
                });
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda_override.unwrap_or(self.alpha)
    }
}

/// Output of a distribution-valued estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    /// Estimated target class distribution.
    pub distribution: ProbabilitySimplex,
    /// EM iterations; 0 for non-iterative estimators.
    pub iterations: usize,
    /// Threshold LEIP actually used.
    pub tau_used: Option<f64>,
    /// Named scalar diagnostics.
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateResult {
    fn new(distribution: ProbabilitySimplex) -> Self {
        Self {
            distribution,
            iterations: 0,
            tau_used: None,
            diagnostics: BTreeMap::new(),
        }
    }
}

/// Classify-and-count: distribution of row argmaxes.
pub fn estimate_cc(test: &PosteriorMatrix) -> Result<EstimateResult> {
    let mut counts = vec![0usize; test.n_classes()];
    for row in test.rows_iter() {
        counts[argmax(row)] += 1;
    }
    Ok(EstimateResult::new(ProbabilitySimplex::from_counts(
        &counts,
    )?))
}

/// Mean prediction vector of a test batch. `Soft` averages the posterior
/// rows; `Hard` averages one-hot argmax rows (the classify-and-count
/// distribution).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanMode {
    Soft,
    Hard,
}

pub fn mean_prediction(test: &PosteriorMatrix, mode: MeanMode) -> ProbabilitySimplex {
    match mode {
        MeanMode::Soft => test.column_means(),
        MeanMode::Hard => {
            let mut counts = vec![0usize; test.n_classes()];
            for row in test.rows_iter() {
                counts[argmax(row)] += 1;
            }
            ProbabilitySimplex::from_counts(&counts).expect("argmax counts have positive mass")
        }
    }
}

/// One E+M round: reweight every posterior row from `source` to `current`
/// and average the updated rows.
pub fn em_step(
    test: &PosteriorMatrix,
    source: &ProbabilitySimplex,
    current: &ProbabilitySimplex,
) -> Result<ProbabilitySimplex> {
    if test.n_classes() != source.len() {
        return Err(ShiftError::DimensionMismatch {
            expected: test.n_classes(),
            actual: source.len(),
        });
    }
    let ratio = prior_ratio(source, current)?;
    let m = test.n_classes();
    let mut updated = vec![0.0; m];
    let mut sums = vec![0.0; m];
    for (k, row) in test.rows_iter().enumerate() {
        prior_update_into(row, &ratio, &mut updated).map_err(|e| e.at_row(k))?;
        for (s, &p) in sums.iter_mut().zip(&updated) {
            *s += p;
        }
    }
    ProbabilitySimplex::from_unnormalized(sums)
}

/// The likelihood EM ascends: mean over samples of
/// log sum_j (prior_j / source_j) * posterior_kj. Non-decreasing across
/// [`em_step`] iterations.
pub fn em_objective(
    test: &PosteriorMatrix,
    source: &ProbabilitySimplex,
    prior: &ProbabilitySimplex,
) -> Result<f64> {
    let ratio = prior_ratio(source, prior)?;
    let mut total = 0.0;
    for row in test.rows_iter() {
        let mass: f64 = row.iter().zip(&ratio).map(|(&p, &r)| p * r).sum();
        if mass <= 0.0 {
            return Err(ShiftError::DegenerateSupport);
        }
        total += mass.ln();
    }
    Ok(total / test.n_rows() as f64)
}

/// Maximum-likelihood prevalence estimation by expectation-maximization.
///
/// Iterates [`em_step`] from the configured initialization until the L1
/// change falls below `cfg.tol` or `cfg.max_iter` rounds have run.
/// `validation` is required for [`EmInit::SoftMeanValidation`].
pub fn estimate_em(
    test: &PosteriorMatrix,
    source: &ProbabilitySimplex,
    cfg: &EmConfig,
    validation: Option<&PosteriorMatrix>,
) -> Result<EstimateResult> {
    cfg.validate()?;
    if !source.is_strictly_positive() {
        let i = source.probs().iter().position(|&p| p <= 0.0).unwrap();
        return Err(ShiftError::ZeroSourceEntry(i));
    }
    let mut current = match &cfg.init {
        EmInit::SourcePrior => source.clone(),
        EmInit::SoftMeanValidation => match validation {
            Some(v) => v.column_means(),
            None => return Err(ShiftError::MissingValidation),
        },
        EmInit::Explicit(p) => {
            if p.len() != test.n_classes() {
                return Err(ShiftError::DimensionMismatch {
                    expected: test.n_classes(),
                    actual: p.len(),
                });
            }
            p.clone()
        }
    };

    let mut iterations = 0;
    let mut step_l1 = f64::INFINITY;
    while iterations < cfg.max_iter {
        let next = em_step(test, source, &current)?;
        iterations += 1;
        step_l1 = next.l1_distance(&current);
        current = next;
        if step_l1 < cfg.tol {
            break;
        }
    }

    let mut result = EstimateResult::new(current);
    result.iterations = iterations;
    result
        .diagnostics
        .insert("final_step_l1".to_string(), step_l1);
    Ok(result)
}

fn confusion_as_joint(
    confusion: &ConfusionMatrix,
    source: &ProbabilitySimplex,
) -> Result<ConfusionMatrix> {
    match confusion.kind() {
        ConfusionKind::Conditional => confusion.to_joint(source),
        ConfusionKind::Joint => Ok(confusion.clone()),
    }
}

const SINGULAR_CONDITION_LIMIT: f64 = 1e12;

fn checked_joint(
    confusion: &ConfusionMatrix,
    source: &ProbabilitySimplex,
) -> Result<ConfusionMatrix> {
    let joint = confusion_as_joint(confusion, source)?;
    let cond = joint.condition_number();
    if !cond.is_finite() || cond > SINGULAR_CONDITION_LIMIT {
        return Err(ShiftError::SingularConfusion { cond });
    }
    Ok(joint)
}

/// Clip negative weights to zero and rescale so sum w_i * p_s_i = 1.
fn clip_and_rescale(mut w: Vec<f64>, source: &ProbabilitySimplex) -> Result<ShiftWeights> {
    for x in &mut w {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let mass: f64 = w.iter().zip(source.probs()).map(|(wi, pi)| wi * pi).sum();
    if mass <= 0.0 {
        return Err(ShiftError::DegenerateSupport);
    }
    for x in &mut w {
        *x /= mass;
    }
    ShiftWeights::new(w, source)
}

/// Confusion-matrix moment matching: solve C_joint w = u_hat where
/// C_joint(i, j) = p(pred_i | true_j) * p_s(true_j), then clip negatives and
/// rescale. A conditional `confusion` is scaled by `source` internally.
pub fn estimate_bbsl(
    confusion: &ConfusionMatrix,
    u_hat: &ProbabilitySimplex,
    source: &ProbabilitySimplex,
) -> Result<ShiftWeights> {
    if confusion.n_classes() != u_hat.len() {
        return Err(ShiftError::DimensionMismatch {
            expected: confusion.n_classes(),
            actual: u_hat.len(),
        });
    }
    let joint = checked_joint(confusion, source)?;
    let m = joint.n_classes();
    let w = linalg::solve(joint.entries(), m, u_hat.probs()).ok_or({
        ShiftError::SingularConfusion {
            cond: f64::INFINITY,
        }
    })?;
    clip_and_rescale(w, source)
}

/// Regularized moment matching: with A = C_joint and b = u_hat - A·1, solve
/// min ||A t - b||^2 + lambda ||t||^2 and return w = 1 + t, clipped and
/// rescaled. With lambda = 0 this coincides with [`estimate_bbsl`]; as
/// lambda grows, w shrinks toward the no-shift vector of ones.
pub fn estimate_rlls(
    confusion: &ConfusionMatrix,
    u_hat: &ProbabilitySimplex,
    source: &ProbabilitySimplex,
    cfg: &RllsConfig,
) -> Result<ShiftWeights> {
    cfg.validate()?;
    if confusion.n_classes() != u_hat.len() {
        return Err(ShiftError::DimensionMismatch {
            expected: confusion.n_classes(),
            actual: u_hat.len(),
        });
    }
    let joint = checked_joint(confusion, source)?;
    let m = joint.n_classes();
    let ones = vec![1.0; m];
    let a_ones = linalg::mat_vec(joint.entries(), m, &ones);
    let b: Vec<f64> = u_hat
        .probs()
        .iter()
        .zip(&a_ones)
        .map(|(&u, &c)| u - c)
        .collect();
    let theta = linalg::solve_ridge(joint.entries(), m, &b, cfg.lambda()).ok_or({
        ShiftError::SingularConfusion {
            cond: f64::INFINITY,
        }
    })?;
    let w: Vec<f64> = theta.iter().map(|&t| 1.0 + t).collect();
    clip_and_rescale(w, source)
}

/// Default recall floor below which [`select_tau`] falls back to the mean
/// recall.
pub const DEFAULT_RECALL_FLOOR: f64 = 0.3;

/// Pick LEIP's confidence threshold from a validation confusion matrix.
///
/// The minimum accuracy on any label-shifted batch is the minimum per-class
/// recall, so the top min-recall fraction of test samples (by max
/// probability) can be trusted: tau is the value at the top-n-percent
/// position of the sorted max probabilities, n = min recall * 100, using
/// nearest-rank (index ceil(n/100 * N) - 1, clamped). When the minimum
/// recall drops below `floor`, the mean recall is used instead.
pub fn select_tau_with_floor(
    confusion: &ConfusionMatrix,
    test_top_probs: &[f64],
    floor: f64,
) -> Result<f64> {
    if test_top_probs.is_empty() {
        return Err(ShiftError::EmptyInput);
    }
    debug_assert_eq!(confusion.kind(), ConfusionKind::Conditional);
    let min_recall = confusion.min_recall();
    let recall = if min_recall < floor {
        confusion.mean_recall()
    } else {
        min_recall
    };
    let mut sorted = test_top_probs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let rank = (recall * n as f64).ceil() as usize;
    let index = rank.saturating_sub(1).min(n - 1);
    Ok(sorted[index])
}

pub fn select_tau(confusion: &ConfusionMatrix, test_top_probs: &[f64]) -> Result<f64> {
    select_tau_with_floor(confusion, test_top_probs, DEFAULT_RECALL_FLOOR)
}

/// Hard-count class distribution of a label list, optionally floored.
fn pool_distribution(counts: &[usize], total: usize, smoothing: Smoothing) -> Vec<f64> {
    let mut dist: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    if let Smoothing::Floor(eps) = smoothing {
        let mut sum = 0.0;
        for d in &mut dist {
            if *d < eps {
                *d = eps;
            }
            sum += *d;
        }
        for d in &mut dist {
            *d /= sum;
        }
    }
    dist
}

/// Sample skewness of the max-probability distribution; reported as a
/// diagnostic for the long-tail precondition, never enforced.
fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Label shift estimation by incremental prior update.
///
/// 1. Split rows at tau into a confident set A and a remainder B.
/// 2. Seed a label pool with A's argmaxes; its hard-count distribution is
///    the running estimate.
/// 3. Visit B in descending max-probability order (stable on the original
///    row index); re-weight each row from `source` to the running estimate,
///    append the updated argmax to the pool, and refresh the estimate.
/// 4. Re-weight all rows with the final pool distribution and hard-count
///    their argmaxes into the returned estimate.
///
/// `confusion` (conditional, from a validation set) is required when
/// `cfg.tau` is [`TauRule::Auto`]. Classes that never enter the pool keep
/// probability zero through every update; [`Smoothing::Floor`] is the
/// escape hatch for batches where that locking is unacceptable.
pub fn estimate_leip(
    test: &PosteriorMatrix,
    source: &ProbabilitySimplex,
    cfg: &LeipConfig,
    confusion: Option<&ConfusionMatrix>,
) -> Result<EstimateResult> {
    let m = test.n_classes();
    cfg.validate(m)?;
    if source.len() != m {
        return Err(ShiftError::DimensionMismatch {
            expected: m,
            actual: source.len(),
        });
    }
    if !source.is_strictly_positive() {
        let i = source.probs().iter().position(|&p| p <= 0.0).unwrap();
        return Err(ShiftError::ZeroSourceEntry(i));
    }

    let top_probs: Vec<f64> = (0..test.n_rows()).map(|k| test.row_max(k)).collect();
    let tau = match cfg.tau {
        TauRule::Explicit(t) => t,
        TauRule::Auto => {
            let confusion = confusion.ok_or(ShiftError::MissingValidation)?;
            select_tau(confusion, &top_probs)?
        }
    };

    // Split: A keeps rows at or above tau, B the rest.
    let mut counts = vec![0usize; m];
    let mut total = 0usize;
    let mut deferred: Vec<usize> = Vec::new();
    for (k, &q) in top_probs.iter().enumerate() {
        if q >= tau {
            counts[test.row_argmax(k)] += 1;
            total += 1;
        } else {
            deferred.push(k);
        }
    }
    if total == 0 {
        return Err(ShiftError::EmptyConfidentSet { tau });
    }
    let confident = total;

    // Descending confidence, stable on the original row index.
    deferred.sort_by(|&a, &b| top_probs[b].total_cmp(&top_probs[a]).then(a.cmp(&b)));

    // Incremental pass: each deferred row is re-weighted with the pool
    // distribution as it stands, then folded in.
    let mut updated = vec![0.0; m];
    for &k in &deferred {
        let target = pool_distribution(&counts, total, cfg.smoothing);
        let ratio: Vec<f64> = target
            .iter()
            .zip(source.probs())
            .map(|(&t, &s)| t / s)
            .collect();
        prior_update_into(test.row(k), &ratio, &mut updated).map_err(|e| e.at_row(k))?;
        counts[argmax(&updated)] += 1;
        total += 1;
    }

    // Final pass: re-label every row with the pooled estimate.
    let estimate = pool_distribution(&counts, total, cfg.smoothing);
    let ratio: Vec<f64> = estimate
        .iter()
        .zip(source.probs())
        .map(|(&t, &s)| t / s)
        .collect();
    let mut final_counts = vec![0usize; m];
    for (k, row) in test.rows_iter().enumerate() {
        prior_update_into(row, &ratio, &mut updated).map_err(|e| e.at_row(k))?;
        final_counts[argmax(&updated)] += 1;
    }

    let mut result = EstimateResult::new(ProbabilitySimplex::from_counts(&final_counts)?);
    result.tau_used = Some(tau);
    result.diagnostics.insert(
        "confident_fraction".to_string(),
        confident as f64 / test.n_rows() as f64,
    );
    result
        .diagnostics
        .insert("top_prob_skewness".to_string(), skewness(&top_probs));
    Ok(result)
}
