use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::types::{ImpressionLog, TrainingSample, PAD_NEWS_ID};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingReport {
    /// Impressions whose negatives had to be filled with [`PAD_NEWS_ID`].
    pub zero_negative_impressions: usize,
    /// Unlabeled impressions that produced no samples.
    pub unlabeled_skipped: usize,
}

/// Keeps the `len` most recent clicks (oldest first) and right-pads with [`PAD_NEWS_ID`].
pub fn fit_history(history: &[String], len: usize) -> Vec<String> {
    let start = history.len().saturating_sub(len);
    let mut out: Vec<String> = history[start..].to_vec();
    out.resize(len, PAD_NEWS_ID.to_string());
    out
}

/// Pairs every clicked candidate with `k` negatives from the same impression.
///
/// Negatives are drawn without replacement when at least `k` exist and with
/// replacement otherwise. The output depends only on the inputs and `seed`.
pub fn sample_training_pairs(
    impressions: &[ImpressionLog],
    k: usize,
    history_len: usize,
    seed: u64,
) -> (Vec<TrainingSample>, SamplingReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut report = SamplingReport::default();
    for imp in impressions {
        if !imp.is_labeled() {
            report.unlabeled_skipped += 1;
            continue;
        }
        let negatives: Vec<&str> = imp.negatives().map(|c| c.news_id.as_str()).collect();
        let positives: Vec<String> = imp.positives().map(|c| c.news_id.clone()).collect();
        if negatives.is_empty() && !positives.is_empty() {
            report.zero_negative_impressions += 1;
        }
        let history = fit_history(&imp.history, history_len);
        for positive in &positives {
            let drawn: Vec<String> = if negatives.is_empty() {
                vec![PAD_NEWS_ID.to_string(); k]
            } else if negatives.len() >= k {
                let mut pool = negatives.clone();
                pool.shuffle(&mut rng);
                pool.into_iter().take(k).map(str::to_string).collect()
            } else {
                (0..k)
                    .map(|_| negatives[rng.random_range(0..negatives.len())].to_string())
                    .collect()
            };
            samples.push(TrainingSample {
                impression_id: imp.impression_id.clone(),
                user_id: imp.user_id.clone(),
                history: history.clone(),
                positive: positive.clone(),
                negatives: drawn,
                impression_positives: positives.clone(),
            });
        }
    }
    (samples, report)
}
