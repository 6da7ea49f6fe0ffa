//! Probability-domain types and the Bayes prior-update transform.
//!
//! Everything downstream (estimators, calibration, the benchmark harness)
//! works in terms of these types. All of them are immutable after
//! construction and validated on entry: ingestion accepts a sum-to-one slack
//! of [`INGEST_TOLERANCE`] and silently renormalizes (external CSV data
//! carries rounding noise), while values produced internally are held to
//! [`SIMPLEX_TOLERANCE`].
//!
//! Class identity is positional: class `i` is column `i`. Name-to-index
//! mapping, when a CSV carries a header, is the I/O layer's job.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShiftError};

/// Slack accepted when ingesting external probability vectors; anything
/// within this distance of sum 1 is renormalized.
pub const INGEST_TOLERANCE: f64 = 1e-6;

/// Tolerance internal arithmetic is held to.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Index of the largest entry, ties broken toward the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_entries(v: &[f64]) -> Result<()> {
    if v.len() < 2 {
        return Err(ShiftError::DimensionTooSmall(v.len()));
    }
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(ShiftError::NonFiniteEntry(i));
        }
        if x < 0.0 {
            return Err(ShiftError::NegativeEntry { index: i, value: x });
        }
    }
    Ok(())
}

/// A class distribution: m >= 2 nonnegative entries summing to 1.
///
/// Holds source and target priors as well as every estimator's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilitySimplex {
    probs: Vec<f64>,
}

impl ProbabilitySimplex {
    /// Validate a raw vector as a distribution. The sum may deviate from 1
    /// by at most [`INGEST_TOLERANCE`]; within that band the vector is
    /// renormalized, beyond it the input is rejected.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        check_entries(&raw)?;
        let sum: f64 = raw.iter().sum();
        if (sum - 1.0).abs() > INGEST_TOLERANCE {
            return Err(ShiftError::SumOutOfTolerance {
                sum,
                tolerance: INGEST_TOLERANCE,
            });
        }
        Self::from_unnormalized(raw)
    }

    /// Normalize any nonnegative vector with positive mass into a
    /// distribution. Rejects negative or non-finite entries and zero mass.
    pub fn from_unnormalized(mut raw: Vec<f64>) -> Result<Self> {
        check_entries(&raw)?;
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(ShiftError::DegenerateSupport);
        }
        for x in &mut raw {
            *x /= sum;
        }
        Ok(Self { probs: raw })
    }

    /// Empirical distribution of integer class counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        Self::from_unnormalized(counts.iter().map(|&c| c as f64).collect())
    }

    pub fn uniform(classes: usize) -> Self {
        assert!(classes >= 2, "need at least 2 classes");
        Self {
            probs: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, class: usize) -> f64 {
        self.probs[class]
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    fn check_same_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(ShiftError::DimensionMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ProbabilitySimplex {
    type Error = ShiftError;
    fn try_from(raw: Vec<f64>) -> Result<Self> {
        Self::new(raw)
    }
}

impl From<ProbabilitySimplex> for Vec<f64> {
    fn from(s: ProbabilitySimplex) -> Self {
        s.probs
    }
}

/// N-by-m row-stochastic matrix of per-sample class posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    data: Vec<f64>,
    rows: usize,
    classes: usize,
}

impl PosteriorMatrix {
    /// Validate raw rows; each must pass the simplex ingestion rules and all
    /// must share the same width.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(ShiftError::EmptyBatch);
        }
        let classes = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * classes);
        for (k, row) in rows.into_iter().enumerate() {
            if row.len() != classes {
                return Err(ShiftError::DimensionMismatch {
                    expected: classes,
                    actual: row.len(),
                }
                .at_row(k));
            }
            let simplex = ProbabilitySimplex::new(row).map_err(|e| e.at_row(k))?;
            data.extend_from_slice(simplex.probs());
        }
        Ok(Self {
            rows: data.len() / classes,
            data,
            classes,
        })
    }

    pub fn from_simplex_rows(rows: Vec<ProbabilitySimplex>) -> Result<Self> {
        if rows.is_empty() {
            return Err(ShiftError::EmptyBatch);
        }
        let classes = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * classes);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != classes {
                return Err(ShiftError::DimensionMismatch {
                    expected: classes,
                    actual: row.len(),
                }
                .at_row(k));
            }
            data.extend_from_slice(row.probs());
        }
        Ok(Self {
            rows: rows.len(),
            data,
            classes,
        })
    }

    pub(crate) fn from_raw_unchecked(data: Vec<f64>, rows: usize, classes: usize) -> Self {
        debug_assert_eq!(data.len(), rows * classes);
        Self {
            data,
            rows,
            classes,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.classes..(k + 1) * self.classes]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.classes)
    }

    /// Predicted class of row k (lowest index wins ties).
    pub fn row_argmax(&self, k: usize) -> usize {
        argmax(self.row(k))
    }

    /// Largest probability in row k.
    pub fn row_max(&self, k: usize) -> f64 {
        self.row(k)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Column means; a convex combination of simplex rows, hence a simplex.
    pub fn column_means(&self) -> ProbabilitySimplex {
        let mut sums = vec![0.0; self.classes];
        for row in self.rows_iter() {
            for (s, &p) in sums.iter_mut().zip(row) {
                *s += p;
            }
        }
        ProbabilitySimplex::from_unnormalized(sums)
            .expect("column means of simplex rows always have positive mass")
    }

    /// Elementwise natural log, the canonical probability-to-logit
    /// conversion. Fails if any probability is exactly zero.
    pub fn to_logits(&self) -> Result<LogitMatrix> {
        let mut data = Vec::with_capacity(self.data.len());
        for (idx, &p) in self.data.iter().enumerate() {
            let l = p.ln();
            if !l.is_finite() {
                return Err(ShiftError::NonFiniteLogits {
                    row: idx / self.classes,
                    col: idx % self.classes,
                });
            }
            data.push(l);
        }
        Ok(LogitMatrix {
            data,
            rows: self.rows,
            classes: self.classes,
        })
    }

    /// New matrix containing the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(ShiftError::EmptyBatch);
        }
        let mut data = Vec::with_capacity(indices.len() * self.classes);
        for &k in indices {
            data.extend_from_slice(self.row(k));
        }
        Ok(Self {
            data,
            rows: indices.len(),
            classes: self.classes,
        })
    }
}

/// N-by-m matrix of raw classifier scores; finite entries, otherwise
/// unconstrained. The input side of calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    data: Vec<f64>,
    rows: usize,
    classes: usize,
}

impl LogitMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(ShiftError::EmptyBatch);
        }
        let classes = rows[0].len();
        if classes < 2 {
            return Err(ShiftError::DimensionTooSmall(classes));
        }
        let mut data = Vec::with_capacity(rows.len() * classes);
        for (k, row) in rows.into_iter().enumerate() {
            if row.len() != classes {
                return Err(ShiftError::DimensionMismatch {
                    expected: classes,
                    actual: row.len(),
                }
                .at_row(k));
            }
            for (j, &z) in row.iter().enumerate() {
                if !z.is_finite() {
                    return Err(ShiftError::NonFiniteLogits { row: k, col: j });
                }
            }
            data.extend_from_slice(&row);
        }
        Ok(Self {
            rows: data.len() / classes,
            data,
            classes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.classes..(k + 1) * self.classes]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.classes)
    }

    /// Row-wise softmax (numerically stabilized by the row max).
    pub fn softmax(&self) -> PosteriorMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        let mut buf = vec![0.0; self.classes];
        for row in self.rows_iter() {
            softmax_into(row, &mut buf);
            data.extend_from_slice(&buf);
        }
        PosteriorMatrix::from_raw_unchecked(data, self.rows, self.classes)
    }

    /// Every logit multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|z| z * factor).collect(),
            rows: self.rows,
            classes: self.classes,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(ShiftError::EmptyBatch);
        }
        let mut data = Vec::with_capacity(indices.len() * self.classes);
        for &k in indices {
            data.extend_from_slice(self.row(k));
        }
        Ok(Self {
            data,
            rows: indices.len(),
            classes: self.classes,
        })
    }
}

/// Stable softmax of one row into a preallocated buffer.
pub(crate) fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        let e = (z - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Whether a confusion matrix stores p(pred | true) columns or the joint
/// p(pred, true).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfusionKind {
    /// Entry (i, j) = p(pred = i | true = j); every column sums to 1.
    Conditional,
    /// Entry (i, j) = p(pred = i, true = j); all entries sum to 1.
    Joint,
}

/// m-by-m confusion matrix, column-indexed by the true class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    entries: Vec<f64>,
    classes: usize,
    kind: ConfusionKind,
}

impl ConfusionMatrix {
    /// Build a conditional confusion matrix. Columns may deviate from sum 1
    /// by at most [`INGEST_TOLERANCE`] and are renormalized.
    pub fn conditional(entries: Vec<f64>, classes: usize) -> Result<Self> {
        Self::check_shape(&entries, classes)?;
        let mut entries = entries;
        for j in 0..classes {
            let col_sum: f64 = (0..classes).map(|i| entries[i * classes + j]).sum();
            if (col_sum - 1.0).abs() > INGEST_TOLERANCE {
                return Err(ShiftError::SumOutOfTolerance {
                    sum: col_sum,
                    tolerance: INGEST_TOLERANCE,
                });
            }
            for i in 0..classes {
                entries[i * classes + j] /= col_sum;
            }
        }
        Ok(Self {
            entries,
            classes,
            kind: ConfusionKind::Conditional,
        })
    }

    /// Build a joint confusion matrix; the grand sum must be within
    /// [`INGEST_TOLERANCE`] of 1 and is renormalized.
    pub fn joint(entries: Vec<f64>, classes: usize) -> Result<Self> {
        Self::check_shape(&entries, classes)?;
        let mut entries = entries;
        let total: f64 = entries.iter().sum();
        if (total - 1.0).abs() > INGEST_TOLERANCE {
            return Err(ShiftError::SumOutOfTolerance {
                sum: total,
                tolerance: INGEST_TOLERANCE,
            });
        }
        for e in &mut entries {
            *e /= total;
        }
        Ok(Self {
            entries,
            classes,
            kind: ConfusionKind::Joint,
        })
    }

    fn check_shape(entries: &[f64], classes: usize) -> Result<()> {
        if classes < 2 {
            return Err(ShiftError::DimensionTooSmall(classes));
        }
        if entries.len() != classes * classes {
            return Err(ShiftError::DimensionMismatch {
                expected: classes * classes,
                actual: entries.len(),
            });
        }
        for (i, &e) in entries.iter().enumerate() {
            if !e.is_finite() {
                return Err(ShiftError::NonFiniteEntry(i));
            }
            if e < 0.0 {
                return Err(ShiftError::NegativeEntry { index: i, value: e });
            }
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.classes
    }

    pub fn kind(&self) -> ConfusionKind {
        self.kind
    }

    /// Entry (i, j): prediction i, true class j.
    pub fn entry(&self, pred: usize, truth: usize) -> f64 {
        self.entries[pred * self.classes + truth]
    }

    pub(crate) fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Joint variant: conditional columns scaled by the source prior.
    /// A joint matrix is returned unchanged.
    pub fn to_joint(&self, source: &ProbabilitySimplex) -> Result<Self> {
        if source.len() != self.classes {
            return Err(ShiftError::DimensionMismatch {
                expected: self.classes,
                actual: source.len(),
            });
        }
        match self.kind {
            ConfusionKind::Joint => Ok(self.clone()),
            ConfusionKind::Conditional => {
                let mut entries = self.entries.clone();
                for i in 0..self.classes {
                    for j in 0..self.classes {
                        entries[i * self.classes + j] *= source.get(j);
                    }
                }
                Ok(Self {
                    entries,
                    classes: self.classes,
                    kind: ConfusionKind::Joint,
                })
            }
        }
    }

    /// Per-class recall: the diagonal of a conditional matrix.
    pub fn recalls(&self) -> Vec<f64> {
        debug_assert_eq!(self.kind, ConfusionKind::Conditional);
        (0..self.classes).map(|i| self.entry(i, i)).collect()
    }

    pub fn min_recall(&self) -> f64 {
        self.recalls().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn mean_recall(&self) -> f64 {
        self.recalls().iter().sum::<f64>() / self.classes as f64
    }

    /// 1-norm condition number; infinity when singular.
    pub fn condition_number(&self) -> f64 {
        crate::linalg::condition_1norm(&self.entries, self.classes)
    }
}

/// Elementwise prevalence ratio w = p_t(y) / p_s(y).
///
/// Tied to the source prior it was derived against: sum(w_i * p_s_i) = 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<f64>")]
pub struct ShiftWeights {
    w: Vec<f64>,
}

impl ShiftWeights {
    /// Validate weights against the source prior they were derived from:
    /// nonnegative entries and sum(w_i * p_s_i) = 1 within 1e-6.
    pub fn new(w: Vec<f64>, source: &ProbabilitySimplex) -> Result<Self> {
        if w.len() != source.len() {
            return Err(ShiftError::DimensionMismatch {
                expected: source.len(),
                actual: w.len(),
            });
        }
        for (i, &x) in w.iter().enumerate() {
            if !x.is_finite() {
                return Err(ShiftError::NonFiniteEntry(i));
            }
            if x < 0.0 {
                return Err(ShiftError::NegativeEntry { index: i, value: x });
            }
        }
        let mass: f64 = w.iter().zip(source.probs()).map(|(wi, pi)| wi * pi).sum();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(ShiftError::SumOutOfTolerance {
                sum: mass,
                tolerance: 1e-6,
            });
        }
        Ok(Self { w })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn get(&self, class: usize) -> f64 {
        self.w[class]
    }

    /// The target distribution implied by these weights under `source`:
    /// p_t(y_i) = w_i * p_s(y_i).
    pub fn implied_distribution(&self, source: &ProbabilitySimplex) -> Result<ProbabilitySimplex> {
        if source.len() != self.len() {
            return Err(ShiftError::DimensionMismatch {
                expected: self.len(),
                actual: source.len(),
            });
        }
        ProbabilitySimplex::from_unnormalized(
            self.w
                .iter()
                .zip(source.probs())
                .map(|(wi, pi)| wi * pi)
                .collect(),
        )
    }
}

impl From<ShiftWeights> for Vec<f64> {
    fn from(w: ShiftWeights) -> Self {
        w.w
    }
}

/// Posteriors (and optionally the logits they came from) together with true
/// labels; the validation-set container.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    posteriors: PosteriorMatrix,
    logits: Option<LogitMatrix>,
    labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn from_posteriors(posteriors: PosteriorMatrix, labels: Vec<usize>) -> Result<Self> {
        Self::check_labels(&labels, posteriors.n_rows(), posteriors.n_classes())?;
        Ok(Self {
            posteriors,
            logits: None,
            labels,
        })
    }

    /// Build from logits; posteriors are their softmax.
    pub fn from_logits(logits: LogitMatrix, labels: Vec<usize>) -> Result<Self> {
        Self::check_labels(&labels, logits.n_rows(), logits.n_classes())?;
        let posteriors = logits.softmax();
        Ok(Self {
            posteriors,
            logits: Some(logits),
            labels,
        })
    }

    /// Build from matched posteriors and logits (e.g. exact posteriors plus
    /// their logs).
    pub fn from_parts(
        posteriors: PosteriorMatrix,
        logits: LogitMatrix,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if logits.n_rows() != posteriors.n_rows() || logits.n_classes() != posteriors.n_classes() {
            return Err(ShiftError::DimensionMismatch {
                expected: posteriors.n_classes(),
                actual: logits.n_classes(),
            });
        }
        Self::check_labels(&labels, posteriors.n_rows(), posteriors.n_classes())?;
        Ok(Self {
            posteriors,
            logits: Some(logits),
            labels,
        })
    }

    fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
        if labels.len() != rows {
            return Err(ShiftError::LabelCountMismatch {
                labels: labels.len(),
                rows,
            });
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(ShiftError::LabelOutOfRange {
                    row,
                    label,
                    classes,
                });
            }
        }
        Ok(())
    }

    pub fn posteriors(&self) -> &PosteriorMatrix {
        &self.posteriors
    }

    pub fn logits(&self) -> Option<&LogitMatrix> {
        self.logits.as_ref()
    }

    /// The stored logits, or the elementwise log of the posteriors when no
    /// logits were ingested. Softmax of the result reproduces the
    /// posteriors either way.
    pub fn logits_or_log_posteriors(&self) -> Result<LogitMatrix> {
        match &self.logits {
            Some(l) => Ok(l.clone()),
            None => self.posteriors.to_logits(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.posteriors.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_classes(&self) -> usize {
        self.posteriors.n_classes()
    }

    /// Per-class label counts (length = number of classes).
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// The sub-batch at the given row indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let posteriors = self.posteriors.select(indices)?;
        let logits = match &self.logits {
            Some(l) => Some(l.select(indices)?),
            None => None,
        };
        let labels = indices.iter().map(|&k| self.labels[k]).collect();
        Ok(Self {
            posteriors,
            logits,
            labels,
        })
    }

    /// Replace the posterior side (and drop stale logits) after
    /// recalibration; labels are untouched.
    pub fn with_posteriors(&self, posteriors: PosteriorMatrix) -> Result<Self> {
        Self::from_posteriors(posteriors, self.labels.clone())
    }
}

/// Ratio vector target_i / source_i used by the prior update; source must be
/// strictly positive.
pub(crate) fn prior_ratio(
    source: &ProbabilitySimplex,
    target: &ProbabilitySimplex,
) -> Result<Vec<f64>> {
    if source.len() != target.len() {
        return Err(ShiftError::DimensionMismatch {
            expected: source.len(),
            actual: target.len(),
        });
    }
    source
        .probs()
        .iter()
        .zip(target.probs())
        .enumerate()
        .map(|(i, (&s, &t))| {
            if s <= 0.0 {
                Err(ShiftError::ZeroSourceEntry(i))
            } else {
                Ok(t / s)
            }
        })
        .collect()
}

/// One row of the prior update: out_i proportional to ratio_i * row_i,
/// normalized. Errors when the normalizer vanishes.
pub(crate) fn prior_update_into(row: &[f64], ratio: &[f64], out: &mut [f64]) -> Result<()> {
    let mut sum = 0.0;
    for ((o, &p), &r) in out.iter_mut().zip(row).zip(ratio) {
        let v = r * p;
        *o = v;
        sum += v;
    }
    if sum <= 0.0 {
        return Err(ShiftError::DegenerateSupport);
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// Move a posterior from the source prior to the target prior:
/// entry i proportional to (target_i / source_i) * posterior_i, renormalized.
///
/// Zero target entries are allowed (they zero out classes); zero source
/// entries are an error because the ratio divides by them.
pub fn prior_update(
    posterior: &ProbabilitySimplex,
    source: &ProbabilitySimplex,
    target: &ProbabilitySimplex,
) -> Result<ProbabilitySimplex> {
    posterior.check_same_len(source)?;
    let ratio = prior_ratio(source, target)?;
    let mut out = vec![0.0; posterior.len()];
    prior_update_into(posterior.probs(), &ratio, &mut out)?;
    Ok(ProbabilitySimplex { probs: out })
}

/// Row-wise [`prior_update`]; rows never interact. Row-level failures carry
/// the row index.
pub fn batch_prior_update(
    posteriors: &PosteriorMatrix,
    source: &ProbabilitySimplex,
    target: &ProbabilitySimplex,
) -> Result<PosteriorMatrix> {
    if posteriors.n_classes() != source.len() {
        return Err(ShiftError::DimensionMismatch {
            expected: posteriors.n_classes(),
            actual: source.len(),
        });
    }
    let ratio = prior_ratio(source, target)?;
    let mut data = vec![0.0; posteriors.n_rows() * posteriors.n_classes()];
    for (k, (row, out)) in posteriors
        .rows_iter()
        .zip(data.chunks_exact_mut(posteriors.n_classes()))
        .enumerate()
    {
        prior_update_into(row, &ratio, out).map_err(|e| e.at_row(k))?;
    }
    Ok(PosteriorMatrix::from_raw_unchecked(
        data,
        posteriors.n_rows(),
        posteriors.n_classes(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simplex(v: &[f64]) -> ProbabilitySimplex {
        ProbabilitySimplex::new(v.to_vec()).unwrap()
    }

    #[test]
    fn validate_exact_simplex() {
        let s = simplex(&[0.5, 0.5]);
        assert_eq!(s.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn validate_renormalizes_within_band() {
        let s = ProbabilitySimplex::new(vec![0.5, 0.5 + 1e-7]).unwrap();
        let sum: f64 = s.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn validate_rejects_sum_out_of_tolerance() {
        let err = ProbabilitySimplex::new(vec![0.7, 0.7]).unwrap_err();
        assert!(matches!(err, ShiftError::SumOutOfTolerance { .. }));
    }

    #[test]
    fn validate_rejects_negative_and_small_dims() {
        assert!(matches!(
            ProbabilitySimplex::new(vec![-0.1, 1.1]).unwrap_err(),
            ShiftError::NegativeEntry { index: 0, .. }
        ));
        assert!(matches!(
            ProbabilitySimplex::new(vec![1.0]).unwrap_err(),
            ShiftError::DimensionTooSmall(1)
        ));
        assert!(matches!(
            ProbabilitySimplex::new(vec![f64::NAN, 1.0]).unwrap_err(),
            ShiftError::NonFiniteEntry(0)
        ));
    }

    #[test]
    fn prior_update_identity_when_target_equals_source() {
        let p = simplex(&[0.7, 0.3]);
        let s = simplex(&[0.5, 0.5]);
        let got = prior_update(&p, &s, &s).unwrap();
        for (a, b) in got.probs().iter().zip(p.probs()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn prior_update_degenerate_posterior_is_fixed_point() {
        let p = simplex(&[1.0, 0.0]);
        let got = prior_update(&p, &simplex(&[0.5, 0.5]), &simplex(&[0.9, 0.1])).unwrap();
        assert_eq!(got.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn prior_update_hand_value() {
        // ratios (1.8 * 0.7, 0.2 * 0.3) = (1.26, 0.06); normalizer 1.32.
        let got = prior_update(
            &simplex(&[0.7, 0.3]),
            &simplex(&[0.5, 0.5]),
            &simplex(&[0.9, 0.1]),
        )
        .unwrap();
        assert!((got.get(0) - 21.0 / 22.0).abs() < 1e-15);
        assert!((got.get(1) - 1.0 / 22.0).abs() < 1e-15);
    }

    #[test]
    fn prior_update_rejects_zero_source() {
        let err = prior_update(
            &simplex(&[0.7, 0.3]),
            &ProbabilitySimplex::new(vec![1.0, 0.0]).unwrap(),
            &simplex(&[0.5, 0.5]),
        )
        .unwrap_err();
        assert!(matches!(err, ShiftError::ZeroSourceEntry(1)));
    }

    #[test]
    fn prior_update_degenerate_support() {
        // All posterior mass on the class the target zeroes out.
        let err = prior_update(
            &simplex(&[1.0, 0.0]),
            &simplex(&[0.5, 0.5]),
            &simplex(&[0.0, 1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, ShiftError::DegenerateSupport));
    }

    #[test]
    fn batch_update_rows_are_independent() {
        let m = PosteriorMatrix::from_rows(vec![vec![0.7, 0.3]; 3]).unwrap();
        let s = simplex(&[0.5, 0.5]);
        let t = simplex(&[0.9, 0.1]);
        let got = batch_prior_update(&m, &s, &t).unwrap();
        let single = prior_update(&simplex(&[0.7, 0.3]), &s, &t).unwrap();
        for k in 0..3 {
            assert_eq!(got.row(k), single.probs());
        }
    }

    #[test]
    fn batch_update_identity() {
        let m = PosteriorMatrix::from_rows(vec![vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let s = simplex(&[0.4, 0.6]);
        let got = batch_prior_update(&m, &s, &s).unwrap();
        for k in 0..2 {
            for (a, b) in got.row(k).iter().zip(m.row(k)) {
                assert!((a - b).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn batch_update_two_row_hand_eval() {
        let m = PosteriorMatrix::from_rows(vec![vec![0.7, 0.3], vec![0.2, 0.8]]).unwrap();
        let s = simplex(&[0.5, 0.5]);
        let t = simplex(&[0.9, 0.1]);
        let got = batch_prior_update(&m, &s, &t).unwrap();
        // Row 0 as in the single-row hand value.
        assert!((got.row(0)[0] - 21.0 / 22.0).abs() < 1e-15);
        // Row 1: (1.8*0.2, 0.2*0.8) = (0.36, 0.16); normalizer 0.52.
        assert!((got.row(1)[0] - 0.36 / 0.52).abs() < 1e-15);
        assert!((got.row(1)[1] - 0.16 / 0.52).abs() < 1e-15);
    }

    #[test]
    fn batch_update_attaches_row_index() {
        let m = PosteriorMatrix::from_rows(vec![vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let err = batch_prior_update(&m, &simplex(&[0.5, 0.5]), &simplex(&[0.0, 1.0])).unwrap_err();
        match err {
            ShiftError::Row { row, source } => {
                assert_eq!(row, 1);
                assert!(matches!(*source, ShiftError::DegenerateSupport));
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    #[test]
    fn confusion_conditional_columns_validated() {
        let c = ConfusionMatrix::conditional(vec![0.9, 0.2, 0.1, 0.8], 2).unwrap();
        assert_eq!(c.recalls(), vec![0.9, 0.8]);
        assert!((c.min_recall() - 0.8).abs() < 1e-15);
        let bad = ConfusionMatrix::conditional(vec![0.9, 0.2, 0.3, 0.8], 2);
        assert!(bad.is_err());
    }

    #[test]
    fn confusion_to_joint_scales_columns() {
        let c = ConfusionMatrix::conditional(vec![0.9, 0.2, 0.1, 0.8], 2).unwrap();
        let j = c.to_joint(&simplex(&[0.3, 0.7])).unwrap();
        assert_eq!(j.kind(), ConfusionKind::Joint);
        assert!((j.entry(0, 0) - 0.27).abs() < 1e-15);
        assert!((j.entry(1, 1) - 0.56).abs() < 1e-15);
        let total: f64 = j.entries().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_weights_checked_against_source() {
        let s = simplex(&[0.5, 0.5]);
        assert!(ShiftWeights::new(vec![1.6, 0.4], &s).is_ok());
        assert!(matches!(
            ShiftWeights::new(vec![1.6, 0.6], &s).unwrap_err(),
            ShiftError::SumOutOfTolerance { .. }
        ));
        assert!(ShiftWeights::new(vec![-0.2, 2.2], &s).is_err());
    }

    #[test]
    fn labeled_batch_checks_labels() {
        let m = PosteriorMatrix::from_rows(vec![vec![0.6, 0.4], vec![0.1, 0.9]]).unwrap();
        assert!(LabeledBatch::from_posteriors(m.clone(), vec![0]).is_err());
        assert!(LabeledBatch::from_posteriors(m.clone(), vec![0, 2]).is_err());
        let b = LabeledBatch::from_posteriors(m, vec![0, 1]).unwrap();
        assert_eq!(b.label_counts(), vec![1, 1]);
    }

    #[test]
    fn log_roundtrip_through_softmax() {
        let m = PosteriorMatrix::from_rows(vec![vec![0.6, 0.4], vec![0.25, 0.75]]).unwrap();
        let back = m.to_logits().unwrap().softmax();
        for k in 0..2 {
            for (a, b) in back.row(k).iter().zip(m.row(k)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
