//! Prediction files: one line per impression, `impression_id<TAB>s1 s2 ...`
//! with scores in candidate order.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{evaluate_impressions, EvalResult, MetricError};
use crate::corpus::ImpressionLog;

#[derive(Debug, Error)]
pub enum PredictionError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },
    #[error("impression {0} has no prediction")]
    MissingImpression(String),
    #[error("impression {id}: {expected} candidates but {found} scores")]
    CandidateCount { id: String, expected: usize, found: usize },
    #[error("impression {0} is unlabeled")]
    Unlabeled(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub fn write_predictions<I, S>(path: &Path, rows: I) -> Result<usize, PredictionError>
where
    I: IntoIterator<Item = (S, Vec<f64>)>,
    S: AsRef<str>,
{
    let io_err = |e| PredictionError::Io { path: path.to_path_buf(), source: e };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    let mut n = 0;
    for (id, scores) in rows {
        let joined: Vec<String> = scores.iter().map(|s| s.to_string()).collect();
        writeln!(out, "{}\t{}", id.as_ref(), joined.join(" ")).map_err(io_err)?;
        n += 1;
    }
    out.flush().map_err(io_err)?;
    Ok(n)
}

pub fn read_predictions(path: &Path) -> Result<Vec<(String, Vec<f64>)>, PredictionError> {
    let text = fs::read_to_string(path).map_err(|e| PredictionError::Io { path: path.to_path_buf(), source: e })?;
    let bad = |line, message: String| PredictionError::Format { path: path.to_path_buf(), line, message };
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, scores) = line.split_once('\t').ok_or_else(|| bad(n + 1, "expected impression_id<TAB>scores".into()))?;
        let scores = scores
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| bad(n + 1, format!("`{s}` is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((id.to_string(), scores));
    }
    Ok(rows)
}

/// Joins predictions with a labeled split by impression id and evaluates.
pub fn evaluate_predictions(
    predictions: &[(String, Vec<f64>)],
    impressions: &[ImpressionLog],
) -> Result<EvalResult, PredictionError> {
    let by_id: HashMap<&str, &Vec<f64>> = predictions.iter().map(|(id, s)| (id.as_str(), s)).collect();
    let mut pairs = Vec::with_capacity(impressions.len());
    for imp in impressions {
        let scores = by_id
            .get(imp.impression_id.as_str())
            .ok_or_else(|| PredictionError::MissingImpression(imp.impression_id.clone()))?;
        if scores.len() != imp.candidates.len() {
            return Err(PredictionError::CandidateCount {
                id: imp.impression_id.clone(),
                expected: imp.candidates.len(),
                found: scores.len(),
            });
        }
        let labels = imp.labels().ok_or_else(|| PredictionError::Unlabeled(imp.impression_id.clone()))?;
        pairs.push((labels, (*scores).clone()));
    }
    Ok(evaluate_impressions(&pairs)?)
}
