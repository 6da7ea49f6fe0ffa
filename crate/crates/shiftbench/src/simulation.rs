//! Benchmark scenario generation.
//!
//! Dirichlet-shifted target priors, without-replacement subsampling at the
//! largest feasible batch size, a spherical-Gaussian oracle whose emitted
//! posteriors are exact Bayes posteriors (a desk-scale stand-in for trained
//! classifiers, with ground truth available), temperature distortion for
//! producing miscalibrated inputs, and confusion-matrix estimation.
//!
//! Everything here is seed-deterministic: the same seed yields bit-identical
//! output on every platform, run after run.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShiftError};
use crate::prob::{
    ConfusionMatrix, LabeledBatch, LogitMatrix, PosteriorMatrix, ProbabilitySimplex,
};
use crate::rng::SplitMix64;

/// One Dirichlet-shift draw: the sampled target prior and the pool indices
/// realizing it.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletShiftScenario {
    pub alpha: f64,
    pub seed: u64,
    pub target_prior: ProbabilitySimplex,
    pub selected_indices: Vec<usize>,
}

impl DirichletShiftScenario {
    pub fn n_total(&self) -> usize {
        self.selected_indices.len()
    }

    /// The serialized form of a scenario: `{alpha, seed, target_prior,
    /// n_total}`. Indices are reproducible from the seed and are not
    /// written out.
    pub fn record(&self) -> ScenarioRecord {
        ScenarioRecord {
            alpha: self.alpha,
            seed: self.seed,
            target_prior: self.target_prior.clone(),
            n_total: self.n_total(),
        }
    }
}

/// Wire form of [`DirichletShiftScenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub alpha: f64,
    pub seed: u64,
    pub target_prior: ProbabilitySimplex,
    pub n_total: usize,
}

/// One draw from Dir([alpha]_m) via normalized Gamma(alpha, 1) variates.
/// Smaller alpha gives more extreme shifts.
pub fn sample_dirichlet_prior(alpha: f64, classes: usize, seed: u64) -> Result<ProbabilitySimplex> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(ShiftError::InvalidAlpha(alpha));
    }
    if classes < 2 {
        return Err(ShiftError::DimensionTooSmall(classes));
    }
    let mut rng = SplitMix64::new(seed);
    let draws: Vec<f64> = (0..classes).map(|_| rng.next_gamma(alpha)).collect();
    ProbabilitySimplex::from_unnormalized(draws)
}

/// Indices realizing `target` from a labeled pool, sampling without
/// replacement at the largest feasible size.
///
/// n_total = floor(min over supported classes of count_i / target_i); each
/// class contributes floor(n_total * target_i) samples, with the remainder
/// assigned to the largest fractional parts so realized proportions sit
/// within 1/n_total of the target. Per-class index draws are uniform
/// without replacement.
pub fn subsample_without_replacement(
    labels: &[usize],
    target: &ProbabilitySimplex,
    seed: u64,
) -> Result<Vec<usize>> {
    if labels.is_empty() {
        return Err(ShiftError::EmptyInput);
    }
    let m = target.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (idx, &label) in labels.iter().enumerate() {
        if label >= m {
            return Err(ShiftError::LabelOutOfRange {
                row: idx,
                label,
                classes: m,
            });
        }
        by_class[label].push(idx);
    }

    let mut n_total = f64::INFINITY;
    for (class, &t) in target.probs().iter().enumerate() {
        if t > 0.0 {
            if by_class[class].is_empty() {
                return Err(ShiftError::MissingRequiredClass(class));
            }
            n_total = n_total.min(by_class[class].len() as f64 / t);
        }
    }
    let n_total = n_total.floor() as usize;

    // Largest-remainder rounding of per-class counts, preserving n_total.
    let mut counts: Vec<usize> = Vec::with_capacity(m);
    let mut fractions: Vec<(usize, f64)> = Vec::with_capacity(m);
    let mut assigned = 0usize;
    for (class, &t) in target.probs().iter().enumerate() {
        let exact = n_total as f64 * t;
        let base = exact.floor() as usize;
        counts.push(base);
        assigned += base;
        fractions.push((class, exact - base as f64));
    }
    let mut remainder = n_total - assigned;
    fractions.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(class, frac) in &fractions {
        if remainder == 0 {
            break;
        }
        // Classes with zero target mass never gain remainder samples.
        if frac <= 0.0 {
            break;
        }
        if counts[class] < by_class[class].len() {
            counts[class] += 1;
            remainder -= 1;
        }
    }

    let mut rng = SplitMix64::new(seed);
    let mut selected = Vec::with_capacity(n_total);
    for (class, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let pool = &by_class[class];
        for pos in rng.sample_without_replacement(pool.len(), count) {
            selected.push(pool[pos]);
        }
    }
    selected.sort_unstable();
    Ok(selected)
}

/// Convenience wrapper drawing a target prior and realizing it in one step.
pub fn make_scenario(
    labels: &[usize],
    classes: usize,
    alpha: f64,
    seed: u64,
) -> Result<DirichletShiftScenario> {
    let target_prior = sample_dirichlet_prior(alpha, classes, seed)?;
    let selected_indices =
        subsample_without_replacement(labels, &target_prior, seed.wrapping_add(1))?;
    Ok(DirichletShiftScenario {
        alpha,
        seed,
        target_prior,
        selected_indices,
    })
}

/// A classifier with known ground truth: m Gaussian class-conditionals with
/// shared spherical variance, plus the class prior it was "trained" on.
///
/// Emitted posteriors are the exact Bayes posteriors of that source model,
/// p(y_i | x) proportional to prior_i * exp(-||x - mu_i||^2 / (2 sigma^2)).
/// A batch generated at the oracle's own prior is therefore completely
/// calibrated; a batch generated at a shifted prior reproduces the label
/// shift setting exactly (the posteriors still encode the source prior).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGaussianOracle", into = "RawGaussianOracle")]
pub struct GaussianOracle {
    means: Vec<Vec<f64>>,
    variance: f64,
    class_prior: ProbabilitySimplex,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawGaussianOracle {
    means: Vec<Vec<f64>>,
    variance: f64,
    class_prior: Vec<f64>,
}

impl TryFrom<RawGaussianOracle> for GaussianOracle {
    type Error = ShiftError;
    fn try_from(raw: RawGaussianOracle) -> Result<Self> {
        GaussianOracle::new(
            raw.means,
            raw.variance,
            ProbabilitySimplex::new(raw.class_prior)?,
        )
    }
}

impl From<GaussianOracle> for RawGaussianOracle {
    fn from(o: GaussianOracle) -> Self {
        RawGaussianOracle {
            means: o.means,
            variance: o.variance,
            class_prior: o.class_prior.into(),
        }
    }
}

impl GaussianOracle {
    pub fn new(
        means: Vec<Vec<f64>>,
        variance: f64,
        class_prior: ProbabilitySimplex,
    ) -> Result<Self> {
        if means.len() < 2 {
            return Err(ShiftError::DimensionTooSmall(means.len()));
        }
        if means.len() != class_prior.len() {
            return Err(ShiftError::DimensionMismatch {
                expected: means.len(),
                actual: class_prior.len(),
            });
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(ShiftError::InvalidParameter {
                name: "mean_dimension",
                value: 0.0,
            });
        }
        for mean in &means {
            if mean.len() != dim {
                return Err(ShiftError::DimensionMismatch {
                    expected: dim,
                    actual: mean.len(),
                });
            }
            for (i, &x) in mean.iter().enumerate() {
                if !x.is_finite() {
                    return Err(ShiftError::NonFiniteEntry(i));
                }
            }
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(ShiftError::InvalidParameter {
                name: "variance",
                value: variance,
            });
        }
        Ok(Self {
            means,
            variance,
            class_prior,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn class_prior(&self) -> &ProbabilitySimplex {
        &self.class_prior
    }

    /// Unnormalized log posterior of each class at `x` under the source
    /// model: ln prior_i - ||x - mu_i||^2 / (2 sigma^2).
    fn log_scores(&self, x: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .zip(self.class_prior.probs())
            .map(|(mu, &prior)| {
                let sq: f64 = mu.iter().zip(x).map(|(m, xi)| (xi - m) * (xi - m)).sum();
                prior.ln() - sq / (2.0 * self.variance)
            })
            .collect()
    }

    /// Exact Bayes posterior at a feature point.
    pub fn posterior_at(&self, x: &[f64]) -> Result<ProbabilitySimplex> {
        if x.len() != self.dim() {
            return Err(ShiftError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let scores = self.log_scores(x);
        let mut probs = vec![0.0; scores.len()];
        crate::prob::softmax_into(&scores, &mut probs);
        ProbabilitySimplex::from_unnormalized(probs)
    }
}

/// Draw a labeled batch: labels from `prior`, features from the label's
/// Gaussian, posteriors from the oracle's source model. Logits are the
/// elementwise log of the posteriors, so softmax(logits) reproduces them.
pub fn oracle_generate(
    oracle: &GaussianOracle,
    prior: &ProbabilitySimplex,
    n: usize,
    seed: u64,
) -> Result<LabeledBatch> {
    if n == 0 {
        return Err(ShiftError::EmptyBatch);
    }
    if prior.len() != oracle.n_classes() {
        return Err(ShiftError::DimensionMismatch {
            expected: oracle.n_classes(),
            actual: prior.len(),
        });
    }
    let m = oracle.n_classes();
    let d = oracle.dim();
    let sigma = oracle.variance.sqrt();
    let mut rng = SplitMix64::new(seed);
    let mut labels = Vec::with_capacity(n);
    let mut posterior_data = Vec::with_capacity(n * m);
    let mut logit_data = Vec::with_capacity(n * m);
    let mut x = vec![0.0; d];
    let mut probs = vec![0.0; m];
    for _ in 0..n {
        let y = rng.next_categorical(prior.probs());
        labels.push(y);
        for (xi, mu) in x.iter_mut().zip(&oracle.means[y]) {
            *xi = mu + sigma * rng.next_normal();
        }
        let scores = oracle.log_scores(&x);
        crate::prob::softmax_into(&scores, &mut probs);
        for &p in &probs {
            posterior_data.push(p);
            // Exact log posterior; avoids ln(0) from underflowed
            // probabilities by falling back to the score gap.
            logit_data.push(p.ln().max(-700.0));
        }
    }
    let posteriors = PosteriorMatrix::from_raw_unchecked(posterior_data, n, m);
    let logits = LogitMatrix::from_rows(
        logit_data
            .chunks_exact(m)
            .map(|c| c.to_vec())
            .collect::<Vec<_>>(),
    )?;
    LabeledBatch::from_parts(posteriors, logits, labels)
}

/// Miscalibrate a batch: divide its logits by `temperature` and recompute
/// the posteriors; labels are untouched. Temperatures below 1 sharpen
/// (overconfident), above 1 flatten.
pub fn distort(batch: &LabeledBatch, temperature: f64) -> Result<LabeledBatch> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ShiftError::InvalidTemperature(temperature));
    }
    let logits = batch.logits_or_log_posteriors()?.scaled(1.0 / temperature);
    LabeledBatch::from_logits(logits, batch.labels().to_vec())
}

/// How the validation confusion matrix is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfusionMode {
    /// Entry (i, j) = fraction of class-j samples whose argmax is i.
    Hard,
    /// Column j = mean posterior vector over class-j samples.
    Soft,
}

/// Conditional confusion matrix from a labeled validation batch. Every
/// class must appear at least once, otherwise its column is undefined.
pub fn estimate_confusion(
    validation: &LabeledBatch,
    mode: ConfusionMode,
) -> Result<ConfusionMatrix> {
    let m = validation.n_classes();
    let counts = validation.label_counts();
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(ShiftError::ClassWithNoValidationSamples(class));
    }
    let mut entries = vec![0.0; m * m];
    match mode {
        ConfusionMode::Hard => {
            for (k, &label) in validation.labels().iter().enumerate() {
                let pred = validation.posteriors().row_argmax(k);
                entries[pred * m + label] += 1.0;
            }
        }
        ConfusionMode::Soft => {
            for (k, &label) in validation.labels().iter().enumerate() {
                for (pred, &p) in validation.posteriors().row(k).iter().enumerate() {
                    entries[pred * m + label] += p;
                }
            }
        }
    }
    for (label, &count) in counts.iter().enumerate() {
        for pred in 0..m {
            entries[pred * m + label] /= count as f64;
        }
    }
    ConfusionMatrix::conditional(entries, m)
}
