//! Helpers shared by the integration tests: brute-force metric references,
//! a finite-difference checker, fixture paths and planted-corpus configs.
#![allow(dead_code)]

pub mod gradcheck;

use std::path::{Path, PathBuf};

use newsrec::configuration::{ConfigValue, DevicePlan, ExperimentConfig};
use newsrec::corpus::synth::{category_embeddings, planted_corpus, PlantedConfig, PlantedDataset};
use newsrec::models::{EmbeddingTable, Parameterized};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Reference metrics written from the definitions, with no sorting.
pub mod oracle {
    /// Position of candidate `i` under a stable descending sort.
    fn position(scores: &[f64], i: usize) -> usize {
        (0..scores.len()).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count()
    }

    /// Fraction of (positive, negative) pairs ordered correctly, ties count 1/2.
    pub fn auc(labels: &[u8], scores: &[f64]) -> Option<f64> {
        let (mut good, mut pairs) = (0.0, 0usize);
        for p in (0..labels.len()).filter(|&i| labels[i] == 1) {
            for n in (0..labels.len()).filter(|&i| labels[i] == 0) {
                pairs += 1;
                if scores[p] > scores[n] {
                    good += 1.0;
                } else if scores[p] == scores[n] {
                    good += 0.5;
                }
            }
        }
        (pairs > 0).then(|| good / pairs as f64)
    }

    pub fn mrr(labels: &[u8], scores: &[f64]) -> Option<f64> {
        (0..labels.len())
            .filter(|&i| labels[i] == 1)
            .map(|i| 1.0 / (position(scores, i) + 1) as f64)
            .reduce(f64::max)
    }

    pub fn ndcg(labels: &[u8], scores: &[f64], k: usize) -> Option<f64> {
        let positives = labels.iter().filter(|&&l| l == 1).count();
        if positives == 0 {
            return None;
        }
        let discount = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
        let dcg: f64 = (0..labels.len())
            .filter(|&i| labels[i] == 1)
            .map(|i| position(scores, i))
            .filter(|&pos| pos < k)
            .map(discount)
            .sum();
        let ideal: f64 = (0..positives.min(k)).map(discount).sum();
        Some(dcg / ideal)
    }

    /// Means over the impressions where each metric is defined.
    pub fn evaluate(impressions: &[(Vec<u8>, Vec<f64>)]) -> [f64; 4] {
        let mean = |f: &dyn Fn(&[u8], &[f64]) -> Option<f64>| {
            let vals: Vec<f64> = impressions.iter().filter_map(|(l, s)| f(l, s)).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        [mean(&auc), mean(&mrr), mean(&|l, s| ndcg(l, s, 5)), mean(&|l, s| ndcg(l, s, 10))]
    }
}

/// Random labeled impressions with at least one positive each. Scores are
/// drawn from a small integer grid so ties are common.
pub fn random_impressions(n: usize, max_candidates: usize, seed: u64) -> Vec<(Vec<u8>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..=max_candidates);
            let mut labels: Vec<u8> = (0..len).map(|_| u8::from(rng.random_bool(0.2))).collect();
            if !labels.contains(&1) {
                let i = rng.random_range(0..len);
                labels[i] = 1;
            }
            let tied = rng.random_bool(0.5);
            let scores = (0..len)
                .map(|_| if tied { rng.random_range(0..6) as f64 / 4.0 } else { rng.random::<f64>() * 10.0 - 5.0 })
                .collect();
            (labels, scores)
        })
        .collect()
}

pub const FD_EPS: f64 = 1e-4;
/// Denominator floor for gradients that are zero analytically.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every parameter entry of `value`.
pub fn check_params<T>(value: &T, analytic: &T, loss: impl Fn(&T) -> f64) -> (f64, String)
where
    T: Parameterized + Clone,
{
    let names: Vec<(String, usize)> = value.params().iter().map(|(n, m)| (n.clone(), m.data().len())).collect();
    let grads = analytic.params();
    let mut worst = (0.0, String::new());
    for (pi, (name, len)) in names.iter().enumerate() {
        for k in 0..*len {
            let shifted = |delta: f64| {
                let mut v = value.clone();
                v.params_mut()[pi].1.data_mut()[k] += delta;
                loss(&v)
            };
            let numeric = (shifted(FD_EPS) - shifted(-FD_EPS)) / (2.0 * FD_EPS);
            let e = rel_err(grads[pi].1.data()[k], numeric);
            if e > worst.0 {
                worst = (e, format!("{name}[{k}]"));
            }
        }
    }
    worst
}

/// Same check for a plain input vector.
pub fn check_vector(x: &[f64], analytic: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let shifted = |delta: f64| {
            let mut v = x.to_vec();
            v[k] += delta;
            loss(&v)
        };
        let numeric = (shifted(FD_EPS) - shifted(-FD_EPS)) / (2.0 * FD_EPS);
        worst = worst.max(rel_err(analytic[k], numeric));
    }
    worst
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// The 200-news / 100-user planted corpus.
pub fn planted() -> PlantedDataset {
    planted_corpus(&PlantedConfig::default())
}

pub fn small_planted(seed: u64) -> PlantedDataset {
    planted_corpus(&PlantedConfig::small(seed))
}

/// Settings the planted-signal runs use for every family.
pub fn planted_config(model: &str, output_dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::defaults(model, "planted");
    c.output_dir = output_dir.to_path_buf();
    c.seed = 42;
    c.epochs = 5;
    c.batch_size = 16;
    c.learning_rate = 0.2;
    c.embedding_dim = 32;
    c.attention_heads = 4;
    c.title_len = 8;
    c.history_len = 10;
    c.device_plan = DevicePlan::single();
    c.tracking.sink = "null".into();
    c
}

/// Writes one-hot category vectors plus noise and points the config at them.
pub fn attach_category_embeddings(config: &mut ExperimentConfig, data: &PlantedDataset, dir: &Path) {
    let mut table = EmbeddingTable::new(data.news_category.values().max().map_or(1, |m| m + 1), "category one-hot");
    for (id, v) in category_embeddings(data, 0.1, 7) {
        table.insert(id, v).unwrap();
    }
    let path = dir.join("category_embeddings.tsv");
    table.save(&path).unwrap();
    config
        .model_extras
        .insert("embedding_file".into(), ConfigValue::Str(path.to_string_lossy().into_owned()));
}

/// A quick config for the small planted corpus.
pub fn tiny_config(model: &str, output_dir: &Path) -> ExperimentConfig {
    let mut c = planted_config(model, output_dir);
    c.epochs = 3;
    c.batch_size = 8;
    c.embedding_dim = 8;
    c.attention_heads = 2;
    c.title_len = 6;
    c.history_len = 5;
    c
}
