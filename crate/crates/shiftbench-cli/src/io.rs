//! CSV ingestion and emission.
//!
//! Matrix files: one row per sample, m numeric columns, comma separated,
//! with an optional single header row of class names. Label files: one
//! label per line, either a class index or (when the matrix carried a
//! header) a class name. Written numerals use Rust's shortest round-trip
//! formatting of f64, so a written matrix reads back bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use shiftbench::prob::{LabeledBatch, LogitMatrix, PosteriorMatrix, ProbabilitySimplex};

use crate::CliError;

/// A parsed numeric matrix plus the optional class-name header.
pub struct MatrixFile {
    pub rows: Vec<Vec<f64>>,
    pub class_names: Option<Vec<String>>,
}

fn split_csv_line(line: &str) -> Vec<String> {
    line.split(',').map(|c| c.trim().to_string()).collect()
}

pub fn read_matrix(path: &Path) -> Result<MatrixFile, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut class_names: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_csv_line(line);
        let parsed: Option<Vec<f64>> = cells
            .iter()
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(numbers) => {
                if let Some(w) = width {
                    if numbers.len() != w {
                        return Err(CliError::input(format!(
                            "{} line {line_no}: expected {w} columns, found {}",
                            path.display(),
                            numbers.len()
                        )));
                    }
                } else {
                    width = Some(numbers.len());
                }
                rows.push(numbers);
            }
            None if rows.is_empty() && class_names.is_none() => {
                class_names = Some(cells);
            }
            None => {
                return Err(CliError::input(format!(
                    "{} line {line_no}: non-numeric cell in data row",
                    path.display()
                )));
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    if let (Some(names), Some(w)) = (&class_names, width) {
        if names.len() != w {
            return Err(CliError::input(format!(
                "{}: header has {} names but rows have {w} columns",
                path.display(),
                names.len()
            )));
        }
    }
    Ok(MatrixFile { rows, class_names })
}

pub fn read_posteriors(path: &Path) -> Result<(PosteriorMatrix, Option<Vec<String>>), CliError> {
    let file = read_matrix(path)?;
    let matrix = PosteriorMatrix::from_rows(file.rows)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok((matrix, file.class_names))
}

pub fn read_logits(path: &Path) -> Result<(LogitMatrix, Option<Vec<String>>), CliError> {
    let file = read_matrix(path)?;
    let matrix = LogitMatrix::from_rows(file.rows)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok((matrix, file.class_names))
}

/// A source prior file: a single row or single column of m probabilities.
pub fn read_prior(path: &Path) -> Result<ProbabilitySimplex, CliError> {
    let file = read_matrix(path)?;
    let values: Vec<f64> = if file.rows.len() == 1 {
        file.rows.into_iter().next().unwrap()
    } else if file.rows.iter().all(|r| r.len() == 1) {
        file.rows.into_iter().map(|r| r[0]).collect()
    } else {
        return Err(CliError::input(format!(
            "{}: a prior file must be a single row or a single column",
            path.display()
        )));
    };
    ProbabilitySimplex::new(values).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Labels: one per line; class indices, or class names resolved against the
/// matrix header when one was present.
pub fn read_labels(
    path: &Path,
    classes: usize,
    class_names: Option<&[String]>,
) -> Result<Vec<usize>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut labels = Vec::new();
    let mut first_content_line = true;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let cell = line.trim();
        if cell.is_empty() {
            continue;
        }
        if let Ok(v) = cell.parse::<usize>() {
            if v >= classes {
                return Err(CliError::input(format!(
                    "{} line {line_no}: label {v} out of range for {classes} classes",
                    path.display()
                )));
            }
            labels.push(v);
        } else if let Some(i) = class_names.and_then(|names| names.iter().position(|n| n == cell)) {
            labels.push(i);
        } else if first_content_line {
            // A non-numeric, non-name first line is a header; skip it.
        } else {
            return Err(CliError::input(format!(
                "{} line {line_no}: unrecognized label {cell:?}",
                path.display()
            )));
        }
        first_content_line = false;
    }
    if labels.is_empty() {
        return Err(CliError::input(format!("{}: no labels", path.display())));
    }
    Ok(labels)
}

pub fn load_labeled_logits(
    logits_path: &Path,
    labels_path: &Path,
) -> Result<LabeledBatch, CliError> {
    let (logits, names) = read_logits(logits_path)?;
    let labels = read_labels(labels_path, logits.n_classes(), names.as_deref())?;
    LabeledBatch::from_logits(logits, labels)
        .map_err(|e| CliError::input(format!("{}: {e}", labels_path.display())))
}

pub fn load_labeled_posteriors(
    posteriors_path: &Path,
    labels_path: &Path,
) -> Result<LabeledBatch, CliError> {
    let (posteriors, names) = read_posteriors(posteriors_path)?;
    let labels = read_labels(labels_path, posteriors.n_classes(), names.as_deref())?;
    LabeledBatch::from_posteriors(posteriors, labels)
        .map_err(|e| CliError::input(format!("{}: {e}", labels_path.display())))
}

pub fn format_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> String {
    let mut out = String::new();
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn format_labels(labels: &[usize]) -> String {
    let mut out = String::new();
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// FNV-1a 64 digest of a file's bytes, as recorded in run manifests.
pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in &bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("fnv1a64:{hash:016x}"))
}
