//! Post-hoc calibrators and calibration diagnostics.
//!
//! Four scaling families are supported, all fit by minimizing mean negative
//! log-likelihood on a labeled validation set of logits:
//!
//! * `Ts`   — temperature scaling, softmax(z / T)
//! * `Bcts` — bias-corrected temperature scaling, softmax(z / T + b)
//! * `Vs`   — vector scaling, softmax(s ⊙ z + b)
//! * `Nbvs` — no-bias vector scaling, softmax(s ⊙ z)
//!
//! Positivity of T and s is kept by optimizing their logarithms; fitting
//! starts from the identity map, so the fitted NLL never exceeds the
//! unfitted one. The optimizer is full-batch gradient descent with a
//! backtracking line search over at most 2m+1 parameters.
//!
//! Inputs are logits. A batch that only carries probabilities must be
//! converted through an elementwise log first
//! ([`LabeledBatch::logits_or_log_posteriors`] does exactly that).

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShiftError};
use crate::prob::{
    argmax, softmax_into, LabeledBatch, LogitMatrix, PosteriorMatrix, ProbabilitySimplex,
};

/// Default bin count for expected calibration error.
pub const DEFAULT_ECE_BINS: usize = 15;

const GRAD_TOLERANCE: f64 = 1e-7;
const MAX_FIT_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibratorKind {
    Ts,
    Bcts,
    Vs,
    Nbvs,
    Identity,
}

impl CalibratorKind {
    pub fn name(self) -> &'static str {
        match self {
            CalibratorKind::Ts => "ts",
            CalibratorKind::Bcts => "bcts",
            CalibratorKind::Vs => "vs",
            CalibratorKind::Nbvs => "nbvs",
            CalibratorKind::Identity => "identity",
        }
    }
}

/// A fitted logit-to-posterior map. Serializes as
/// `{"kind", "temperature"?, "scale"?, "bias"?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    kind: CalibratorKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    scale: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    bias: Option<Vec<f64>>,
}

impl Calibrator {
    /// Plain softmax, no parameters.
    pub fn identity() -> Self {
        Self {
            kind: CalibratorKind::Identity,
            temperature: None,
            scale: None,
            bias: None,
        }
    }

    pub fn temperature_scaling(temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(Self {
            kind: CalibratorKind::Ts,
            temperature: Some(temperature),
            scale: None,
            bias: None,
        })
    }

    pub fn bias_corrected_temperature_scaling(temperature: f64, bias: Vec<f64>) -> Result<Self> {
        check_temperature(temperature)?;
        check_finite_vec(&bias)?;
        Ok(Self {
            kind: CalibratorKind::Bcts,
            temperature: Some(temperature),
            scale: None,
            bias: Some(bias),
        })
    }

    pub fn vector_scaling(scale: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        check_scale_vec(&scale)?;
        check_finite_vec(&bias)?;
        if scale.len() != bias.len() {
            return Err(ShiftError::DimensionMismatch {
                expected: scale.len(),
                actual: bias.len(),
            });
        }
        Ok(Self {
            kind: CalibratorKind::Vs,
            temperature: None,
            scale: Some(scale),
            bias: Some(bias),
        })
    }

    pub fn no_bias_vector_scaling(scale: Vec<f64>) -> Result<Self> {
        check_scale_vec(&scale)?;
        Ok(Self {
            kind: CalibratorKind::Nbvs,
            temperature: None,
            scale: Some(scale),
            bias: None,
        })
    }

    pub fn kind(&self) -> CalibratorKind {
        self.kind
    }

    pub fn temperature(&self) -> Option<f64> {
        self.temperature
    }

    pub fn scale(&self) -> Option<&[f64]> {
        self.scale.as_deref()
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    /// Class count this calibrator is pinned to, when its parameters are
    /// per-class. Ts and Identity fit any width.
    pub fn n_classes(&self) -> Option<usize> {
        self.scale
            .as_ref()
            .map(Vec::len)
            .or(self.bias.as_ref().map(Vec::len))
    }

    /// The affine transform applied before the softmax.
    fn transform_into(&self, row: &[f64], out: &mut [f64]) {
        match self.kind {
            CalibratorKind::Identity => out.copy_from_slice(row),
            CalibratorKind::Ts => {
                let t = self.temperature.expect("ts carries a temperature");
                for (o, &z) in out.iter_mut().zip(row) {
                    *o = z / t;
                }
            }
            CalibratorKind::Bcts => {
                let t = self.temperature.expect("bcts carries a temperature");
                let bias = self.bias.as_ref().expect("bcts carries a bias");
                for ((o, &z), &b) in out.iter_mut().zip(row).zip(bias) {
                    *o = z / t + b;
                }
            }
            CalibratorKind::Vs => {
                let scale = self.scale.as_ref().expect("vs carries a scale");
                let bias = self.bias.as_ref().expect("vs carries a bias");
                for (((o, &z), &s), &b) in out.iter_mut().zip(row).zip(scale).zip(bias) {
                    *o = s * z + b;
                }
            }
            CalibratorKind::Nbvs => {
                let scale = self.scale.as_ref().expect("nbvs carries a scale");
                for ((o, &z), &s) in out.iter_mut().zip(row).zip(scale) {
                    *o = s * z;
                }
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("calibrator serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        let c: Self = serde_json::from_str(s)?;
        Ok(c)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(ShiftError::InvalidTemperature(t));
    }
    Ok(())
}

fn check_scale_vec(scale: &[f64]) -> Result<()> {
    for &s in scale {
        if !(s.is_finite() && s > 0.0) {
            return Err(ShiftError::InvalidParameter {
                name: "scale",
                value: s,
            });
        }
    }
    Ok(())
}

fn check_finite_vec(v: &[f64]) -> Result<()> {
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(ShiftError::NonFiniteEntry(i));
        }
    }
    Ok(())
}

/// Fit summary. `nll_after <= nll_before` always holds because the fit
/// starts from the identity map and only accepts improving steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub nll_before: f64,
    pub nll_after: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Mean NLL of softmax-transformed logits under the given parameterization;
/// exposed so the gradient can be checked against finite differences.
///
/// Parameter packing: `Ts` = [ln T]; `Bcts` = [ln T, b_0..b_{m-1}];
/// `Vs` = [ln s_0..ln s_{m-1}, b_0..b_{m-1}]; `Nbvs` = [ln s_0..ln s_{m-1}].
#[derive(Debug)]
pub struct NllObjective<'a> {
    kind: CalibratorKind,
    logits: &'a LogitMatrix,
    labels: &'a [usize],
}

impl<'a> NllObjective<'a> {
    pub fn new(kind: CalibratorKind, logits: &'a LogitMatrix, labels: &'a [usize]) -> Result<Self> {
        if labels.len() != logits.n_rows() {
            return Err(ShiftError::LabelCountMismatch {
                labels: labels.len(),
                rows: logits.n_rows(),
            });
        }
        if kind == CalibratorKind::Identity {
            return Err(ShiftError::InvalidParameter {
                name: "kind",
                value: f64::NAN,
            });
        }
        Ok(Self {
            kind,
            logits,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        let m = self.logits.n_classes();
        match self.kind {
            CalibratorKind::Ts => 1,
            CalibratorKind::Bcts => 1 + m,
            CalibratorKind::Vs => 2 * m,
            CalibratorKind::Nbvs => m,
            CalibratorKind::Identity => 0,
        }
    }

    /// The identity map in this parameterization (all zeros).
    pub fn initial_params(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn transformed_row(&self, row: &[f64], params: &[f64], out: &mut [f64]) {
        let m = self.logits.n_classes();
        match self.kind {
            CalibratorKind::Ts => {
                let inv_t = (-params[0]).exp();
                for (o, &z) in out.iter_mut().zip(row) {
                    *o = z * inv_t;
                }
            }
            CalibratorKind::Bcts => {
                let inv_t = (-params[0]).exp();
                for (j, (o, &z)) in out.iter_mut().zip(row).enumerate() {
                    *o = z * inv_t + params[1 + j];
                }
            }
            CalibratorKind::Vs => {
                for (j, (o, &z)) in out.iter_mut().zip(row).enumerate() {
                    *o = z * params[j].exp() + params[m + j];
                }
            }
            CalibratorKind::Nbvs => {
                for (j, (o, &z)) in out.iter_mut().zip(row).enumerate() {
                    *o = z * params[j].exp();
                }
            }
            CalibratorKind::Identity => out.copy_from_slice(row),
        }
    }

    /// Mean negative log-likelihood at `params`.
    pub fn value(&self, params: &[f64]) -> f64 {
        let m = self.logits.n_classes();
        let mut u = vec![0.0; m];
        let mut total = 0.0;
        for (row, &label) in self.logits.rows_iter().zip(self.labels) {
            self.transformed_row(row, params, &mut u);
            total -= log_softmax_at(&u, label);
        }
        total / self.logits.n_rows() as f64
    }

    /// Analytic gradient of [`Self::value`] at `params`.
    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let m = self.logits.n_classes();
        let n = self.logits.n_rows() as f64;
        let mut grad = vec![0.0; self.dim()];
        let mut u = vec![0.0; m];
        let mut p = vec![0.0; m];
        for (row, &label) in self.logits.rows_iter().zip(self.labels) {
            self.transformed_row(row, params, &mut u);
            softmax_into(&u, &mut p);
            // dNLL/du_j = p_j - 1[j = label], per sample.
            match self.kind {
                CalibratorKind::Ts | CalibratorKind::Bcts => {
                    let inv_t = (-params[0]).exp();
                    let mut gt = 0.0;
                    for j in 0..m {
                        let d = p[j] - f64::from(j == label);
                        // u_j = z_j e^{-t} + b_j, so du_j/dt = -z_j e^{-t}.
                        gt -= d * row[j] * inv_t;
                        if self.kind == CalibratorKind::Bcts {
                            grad[1 + j] += d;
                        }
                    }
                    grad[0] += gt;
                }
                CalibratorKind::Vs => {
                    for j in 0..m {
                        let d = p[j] - f64::from(j == label);
                        grad[j] += d * row[j] * params[j].exp();
                        grad[m + j] += d;
                    }
                }
                CalibratorKind::Nbvs => {
                    for j in 0..m {
                        let d = p[j] - f64::from(j == label);
                        grad[j] += d * row[j] * params[j].exp();
                    }
                }
                CalibratorKind::Identity => {}
            }
        }
        for g in &mut grad {
            *g /= n;
        }
        grad
    }

    /// Unpack optimizer parameters into a calibrator.
    pub fn calibrator(&self, params: &[f64]) -> Calibrator {
        let m = self.logits.n_classes();
        match self.kind {
            CalibratorKind::Ts => Calibrator::temperature_scaling(params[0].exp())
                .expect("exp of a finite parameter is positive"),
            CalibratorKind::Bcts => Calibrator::bias_corrected_temperature_scaling(
                params[0].exp(),
                params[1..].to_vec(),
            )
            .expect("finite parameters"),
            CalibratorKind::Vs => Calibrator::vector_scaling(
                params[..m].iter().map(|s| s.exp()).collect(),
                params[m..].to_vec(),
            )
            .expect("finite parameters"),
            CalibratorKind::Nbvs => {
                Calibrator::no_bias_vector_scaling(params.iter().map(|s| s.exp()).collect())
                    .expect("finite parameters")
            }
            CalibratorKind::Identity => Calibrator::identity(),
        }
    }
}

fn log_softmax_at(u: &[f64], label: usize) -> f64 {
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = u.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    u[label] - lse
}

/// Fit a calibrator by NLL minimization on a validation batch.
///
/// The batch must carry at least two distinct labels. Fitting starts at the
/// identity map; when the iteration cap is hit the best parameters so far
/// are returned with `converged = false`.
pub fn fit_calibrator(
    kind: CalibratorKind,
    validation: &LabeledBatch,
) -> Result<(Calibrator, CalibrationReport)> {
    fit_calibrator_with_bins(kind, validation, DEFAULT_ECE_BINS)
}

/// [`fit_calibrator`] with an explicit ECE bin count for the report.
pub fn fit_calibrator_with_bins(
    kind: CalibratorKind,
    validation: &LabeledBatch,
    bins: usize,
) -> Result<(Calibrator, CalibrationReport)> {
    let mut distinct = validation.labels().to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(ShiftError::SingleClassBatch);
    }

    let logits = validation.logits_or_log_posteriors()?;
    let labels = validation.labels();
    let before = LabeledBatch::from_posteriors(logits.softmax(), labels.to_vec())?;
    let nll_before = mean_nll(before.posteriors(), labels);
    let ece_before = ece(&before, bins)?;

    if kind == CalibratorKind::Identity {
        let report = CalibrationReport {
            nll_before,
            nll_after: nll_before,
            ece_before,
            ece_after: ece_before,
            iterations: 0,
            converged: true,
        };
        return Ok((Calibrator::identity(), report));
    }

    let objective = NllObjective::new(kind, &logits, labels)?;
    let mut params = objective.initial_params();
    let mut value = objective.value(&params);
    let mut iterations = 0;
    let mut converged = false;
    let mut step = 1.0f64;

    while iterations < MAX_FIT_ITERATIONS {
        let grad = objective.gradient(&params);
        let grad_inf = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if grad_inf < GRAD_TOLERANCE {
            converged = true;
            break;
        }
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();

        // Backtracking line search on the steepest-descent direction.
        step = (step * 2.0).min(1e3);
        let mut accepted = false;
        while step > 1e-20 {
            let candidate: Vec<f64> = params
                .iter()
                .zip(&grad)
                .map(|(x, g)| x - step * g)
                .collect();
            let candidate_value = objective.value(&candidate);
            if candidate_value <= value - 1e-4 * step * grad_sq {
                params = candidate;
                value = candidate_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No representable descent step; report the best point found
            // without claiming the gradient tolerance was met.
            break;
        }
    }

    let calibrator = objective.calibrator(&params);
    let after = apply_calibrator(&calibrator, &logits)?;
    let nll_after = mean_nll(&after, labels);
    let after_batch = LabeledBatch::from_posteriors(after, labels.to_vec())?;
    let ece_after = ece(&after_batch, bins)?;
    Ok((
        calibrator,
        CalibrationReport {
            nll_before,
            nll_after,
            ece_before,
            ece_after,
            iterations,
            converged,
        },
    ))
}

fn mean_nll(posteriors: &PosteriorMatrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (k, &label) in labels.iter().enumerate() {
        total -= posteriors.row(k)[label].max(f64::MIN_POSITIVE).ln();
    }
    total / labels.len() as f64
}

/// Map logits to posteriors with a fitted calibrator.
pub fn apply_calibrator(calibrator: &Calibrator, logits: &LogitMatrix) -> Result<PosteriorMatrix> {
    if let Some(m) = calibrator.n_classes() {
        if m != logits.n_classes() {
            return Err(ShiftError::DimensionMismatch {
                expected: m,
                actual: logits.n_classes(),
            });
        }
    }
    let m = logits.n_classes();
    let mut transformed = vec![0.0; m];
    let mut probs = vec![0.0; m];
    let mut data = Vec::with_capacity(logits.n_rows() * m);
    for row in logits.rows_iter() {
        calibrator.transform_into(row, &mut transformed);
        softmax_into(&transformed, &mut probs);
        data.extend_from_slice(&probs);
    }
    Ok(PosteriorMatrix::from_raw_unchecked(
        data,
        logits.n_rows(),
        m,
    ))
}

/// Top-label expected calibration error with equal-width confidence bins.
///
/// Samples fall into `bins` bins over [0, 1] by their max posterior;
/// ECE = sum over bins of (|bin| / N) * |accuracy(bin) - mean confidence(bin)|.
pub fn ece(batch: &LabeledBatch, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(ShiftError::InvalidParameter {
            name: "bins",
            value: 0.0,
        });
    }
    let n = batch.len();
    let mut bin_confidence = vec![0.0; bins];
    let mut bin_correct = vec![0usize; bins];
    let mut bin_count = vec![0usize; bins];
    for (k, &label) in batch.labels().iter().enumerate() {
        let confidence = batch.posteriors().row_max(k);
        let predicted = batch.posteriors().row_argmax(k);
        let b = ((confidence * bins as f64) as usize).min(bins - 1);
        bin_confidence[b] += confidence;
        bin_correct[b] += usize::from(predicted == label);
        bin_count[b] += 1;
    }
    let mut total = 0.0;
    for b in 0..bins {
        if bin_count[b] == 0 {
            continue;
        }
        let count = bin_count[b] as f64;
        let accuracy = bin_correct[b] as f64 / count;
        let confidence = bin_confidence[b] / count;
        total += count / n as f64 * (accuracy - confidence).abs();
    }
    Ok(total)
}

/// Per-class binned calibration error: for class i, the binned gap between
/// column-i probabilities and the indicator of label == i.
pub fn classwise_calibration_error(batch: &LabeledBatch, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(ShiftError::InvalidParameter {
            name: "bins",
            value: 0.0,
        });
    }
    let n = batch.len();
    let m = batch.n_classes();
    let mut out = Vec::with_capacity(m);
    for class in 0..m {
        let mut bin_prob = vec![0.0; bins];
        let mut bin_hits = vec![0usize; bins];
        let mut bin_count = vec![0usize; bins];
        for (k, &label) in batch.labels().iter().enumerate() {
            let p = batch.posteriors().row(k)[class];
            let b = ((p * bins as f64) as usize).min(bins - 1);
            bin_prob[b] += p;
            bin_hits[b] += usize::from(label == class);
            bin_count[b] += 1;
        }
        let mut total = 0.0;
        for b in 0..bins {
            if bin_count[b] == 0 {
                continue;
            }
            let count = bin_count[b] as f64;
            total += count / n as f64 * (bin_hits[b] as f64 / count - bin_prob[b] / count).abs();
        }
        out.push(total);
    }
    Ok(out)
}

/// Fraction of rows whose top label agrees between two posterior matrices
/// after both are moved to the same target prior.
///
/// With `oracle` holding exact posteriors this measures top-label
/// calibration under a changing prior: 1.0 means every post-update argmax of
/// the estimated posteriors matches the truth.
pub fn top_label_shift_agreement(
    estimated: &PosteriorMatrix,
    oracle: &PosteriorMatrix,
    source: &ProbabilitySimplex,
    target: &ProbabilitySimplex,
) -> Result<f64> {
    if estimated.n_rows() != oracle.n_rows() || estimated.n_classes() != oracle.n_classes() {
        return Err(ShiftError::DimensionMismatch {
            expected: oracle.n_classes(),
            actual: estimated.n_classes(),
        });
    }
    let ratio = crate::prob::prior_ratio(source, target)?;
    let m = estimated.n_classes();
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m];
    let mut agree = 0usize;
    for (row_e, row_o) in estimated.rows_iter().zip(oracle.rows_iter()) {
        crate::prob::prior_update_into(row_e, &ratio, &mut a)?;
        crate::prob::prior_update_into(row_o, &ratio, &mut b)?;
        agree += usize::from(argmax(&a) == argmax(&b));
    }
    Ok(agree as f64 / estimated.n_rows() as f64)
}
