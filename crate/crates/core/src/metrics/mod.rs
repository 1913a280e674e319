//! Ranking metrics over impressions: AUC, MRR and nDCG@k.
//!
//! Ties: AUC credits 0.5 per tied positive/negative pair; the rank metrics use
//! a stable descending sort, so tied candidates keep their original order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod prediction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("labels and scores differ in length ({labels} vs {scores})")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("cannot evaluate an empty list of impressions")]
    Empty,
}

fn check_lengths(labels: &[u8], scores: &[f64]) -> Result<(), MetricError> {
    if labels.len() != scores.len() {
        return Err(MetricError::LengthMismatch { labels: labels.len(), scores: scores.len() });
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, via the
/// rank-sum formula with mid-ranks for ties.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64, MetricError> {
    check_lengths(labels, scores)?;
    let positives = labels.iter().filter(|&&l| l > 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::Undefined("AUC needs at least one positive and one negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // sum of 1-based mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        let tied_positives = order[i..=j].iter().filter(|&&k| labels[k] > 0).count();
        rank_sum += mid_rank * tied_positives as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Candidate indices by descending score, stable on ties.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Reciprocal rank of the highest-ranked positive.
pub fn mrr(labels: &[u8], scores: &[f64]) -> Result<f64, MetricError> {
    check_lengths(labels, scores)?;
    ranking(scores)
        .iter()
        .position(|&i| labels[i] > 0)
        .map(|pos| 1.0 / (pos + 1) as f64)
        .ok_or(MetricError::Undefined("MRR needs at least one positive"))
}

fn dcg(gains: impl Iterator<Item = u8>, k: usize) -> f64 {
    gains
        .take(k)
        .enumerate()
        .map(|(pos, label)| (2f64.powi(label as i32) - 1.0) / ((pos + 2) as f64).log2())
        .sum()
}

/// DCG@k with gain `2^label - 1` and discount `log2(position + 1)`, over the ideal DCG@k.
pub fn ndcg_at_k(labels: &[u8], scores: &[f64], k: usize) -> Result<f64, MetricError> {
    check_lengths(labels, scores)?;
    if k == 0 {
        return Err(MetricError::Undefined("nDCG needs k >= 1"));
    }
    if !labels.iter().any(|&l| l > 0) {
        return Err(MetricError::Undefined("nDCG needs at least one positive"));
    }
    let actual = dcg(ranking(scores).into_iter().map(|i| labels[i]), k);
    let mut ideal_labels = labels.to_vec();
    ideal_labels.sort_unstable_by(|a, b| b.cmp(a));
    let ideal = dcg(ideal_labels.into_iter(), k);
    Ok(actual / ideal)
}

/// Mean metrics over a set of impressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub impression_count: usize,
    /// Impressions without both a positive and a negative (excluded from AUC).
    pub skipped_count: usize,
    /// Impressions without any positive (excluded from MRR and nDCG).
    #[serde(default)]
    pub rank_skipped_count: usize,
}

impl EvalResult {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "auc" => Some(self.auc),
            "mrr" => Some(self.mrr),
            "ndcg5" | "ndcg@5" => Some(self.ndcg5),
            "ndcg10" | "ndcg@10" => Some(self.ndcg10),
            _ => None,
        }
    }

    /// Metric names with their values, in reporting order.
    pub fn metrics(&self) -> [(&'static str, f64); 4] {
        [("auc", self.auc), ("mrr", self.mrr), ("ndcg5", self.ndcg5), ("ndcg10", self.ndcg10)]
    }
}

fn mean(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Unweighted per-impression means; sums run in input order.
pub fn evaluate_impressions<L, S>(impressions: &[(L, S)]) -> Result<EvalResult, MetricError>
where
    L: AsRef<[u8]>,
    S: AsRef<[f64]>,
{
    if impressions.is_empty() {
        return Err(MetricError::Empty);
    }
    let (mut auc_sum, mut mrr_sum, mut n5_sum, mut n10_sum) = (0.0, 0.0, 0.0, 0.0);
    let (mut auc_n, mut rank_n) = (0usize, 0usize);
    for (labels, scores) in impressions {
        let (labels, scores) = (labels.as_ref(), scores.as_ref());
        check_lengths(labels, scores)?;
        if let Ok(a) = auc(labels, scores) {
            auc_sum += a;
            auc_n += 1;
        }
        if let Ok(m) = mrr(labels, scores) {
            mrr_sum += m;
            n5_sum += ndcg_at_k(labels, scores, 5)?;
            n10_sum += ndcg_at_k(labels, scores, 10)?;
            rank_n += 1;
        }
    }
    Ok(EvalResult {
        auc: mean(auc_sum, auc_n),
        mrr: mean(mrr_sum, rank_n),
        ndcg5: mean(n5_sum, rank_n),
        ndcg10: mean(n10_sum, rank_n),
        impression_count: impressions.len(),
        skipped_count: impressions.len() - auc_n,
        rank_skipped_count: impressions.len() - rank_n,
    })
}
