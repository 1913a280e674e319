//! Synthetic corpus with a planted preference signal.
//!
//! Every user prefers one category. Each impression shows one news item from the
//! preferred category among `candidates - 1` items from other categories; the
//! click lands on the preferred item with probability `click_prob`, otherwise on
//! a random other candidate. Histories follow the same rule, so a model that
//! recovers the category signal from titles (or embeddings) ranks well.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::types::{Candidate, ImpressionLog, NewsItem, Split, UnifiedCorpus, SCHEMA_VERSION};
use super::vocab::build_vocabulary;

const CATEGORY_NAMES: [&str; 8] = ["sports", "politics", "finance", "health", "travel", "science", "music", "food"];
const FILLER: [&str; 24] = [
    "new", "report", "today", "says", "after", "first", "week", "big", "why", "how", "more", "year",
    "plan", "top", "live", "update", "day", "could", "best", "over", "just", "old", "real", "next",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub news: usize,
    pub categories: usize,
    pub users: usize,
    pub train_impressions: usize,
    pub dev_impressions: usize,
    pub test_impressions: usize,
    pub candidates: usize,
    pub history: usize,
    pub click_prob: f64,
    pub topic_words_per_category: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            news: 200,
            categories: 5,
            users: 100,
            train_impressions: 500,
            dev_impressions: 100,
            test_impressions: 0,
            candidates: 5,
            history: 10,
            click_prob: 0.9,
            topic_words_per_category: 12,
            seed: 42,
        }
    }
}

impl PlantedConfig {
    /// A tiny variant for fast unit tests.
    pub fn small(seed: u64) -> Self {
        Self {
            news: 40,
            categories: 4,
            users: 10,
            train_impressions: 40,
            dev_impressions: 10,
            test_impressions: 5,
            candidates: 4,
            history: 5,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedDataset {
    pub corpus: UnifiedCorpus,
    /// Category index preferred by each user.
    pub preferences: BTreeMap<String, usize>,
    /// Category index of each news item.
    pub news_category: BTreeMap<String, usize>,
}

fn category_name(c: usize) -> String {
    CATEGORY_NAMES.get(c).map(|s| s.to_string()).unwrap_or_else(|| format!("cat{c}"))
}

pub fn planted_corpus(cfg: &PlantedConfig) -> PlantedDataset {
    assert!(cfg.categories >= 2 && cfg.news >= cfg.categories && cfg.candidates >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut by_category: Vec<Vec<String>> = vec![Vec::new(); cfg.categories];
    let mut news = BTreeMap::new();
    let mut news_category = BTreeMap::new();
    for i in 0..cfg.news {
        let c = i % cfg.categories;
        let id = format!("N{i}");
        let cat = category_name(c);
        let mut title: Vec<String> = (0..3)
            .map(|_| format!("{cat}{}", rng.random_range(0..cfg.topic_words_per_category)))
            .collect();
        title.extend((0..2).map(|_| FILLER.choose(&mut rng).unwrap().to_string()));
        title.shuffle(&mut rng);
        news.insert(
            id.clone(),
            NewsItem {
                news_id: id.clone(),
                category: cat.clone(),
                subcategory: format!("{cat}-{}", i % 3),
                title_tokens: title,
                abstract_tokens: vec![],
                entities: None,
            },
        );
        by_category[c].push(id.clone());
        news_category.insert(id, c);
    }

    let draw_other = |rng: &mut ChaCha8Rng, pref: usize| -> String {
        let mut c = rng.random_range(0..cfg.categories - 1);
        if c >= pref {
            c += 1;
        }
        by_category[c].choose(rng).unwrap().clone()
    };

    let mut preferences = BTreeMap::new();
    let mut histories = BTreeMap::new();
    for u in 0..cfg.users {
        let user = format!("U{u}");
        let pref = rng.random_range(0..cfg.categories);
        let history: Vec<String> = (0..cfg.history)
            .map(|_| {
                if rng.random_bool(cfg.click_prob) {
                    by_category[pref].choose(&mut rng).unwrap().clone()
                } else {
                    draw_other(&mut rng, pref)
                }
            })
            .collect();
        preferences.insert(user.clone(), pref);
        histories.insert(user, history);
    }

    let mut next_id = 0usize;
    let mut make_split = |rng: &mut ChaCha8Rng, count: usize, labeled: bool| -> Vec<ImpressionLog> {
        (0..count)
            .map(|i| {
                let user = format!("U{}", i % cfg.users);
                let pref = preferences[&user];
                let mut cands: Vec<(String, bool)> = vec![(by_category[pref].choose(rng).unwrap().clone(), true)];
                while cands.len() < cfg.candidates {
                    let n = draw_other(rng, pref);
                    if !cands.iter().any(|(c, _)| *c == n) {
                        cands.push((n, false));
                    }
                }
                cands.shuffle(rng);
                let clicked = if rng.random_bool(cfg.click_prob) {
                    cands.iter().position(|(_, p)| *p).unwrap()
                } else {
                    let others: Vec<usize> = (0..cands.len()).filter(|&j| !cands[j].1).collect();
                    *others.choose(rng).unwrap()
                };
                next_id += 1;
                ImpressionLog {
                    impression_id: format!("I{next_id}"),
                    user_id: user.clone(),
                    timestamp: 1_573_800_000 + next_id as i64 * 60,
                    history: histories[&user].clone(),
                    candidates: cands
                        .into_iter()
                        .enumerate()
                        .map(|(j, (n, _))| {
                            if labeled {
                                Candidate::labeled(n, u8::from(j == clicked))
                            } else {
                                Candidate::unlabeled(n)
                            }
                        })
                        .collect(),
                }
            })
            .collect()
    };

    let mut splits = BTreeMap::new();
    splits.insert(Split::Train, make_split(&mut rng, cfg.train_impressions, true));
    splits.insert(Split::Dev, make_split(&mut rng, cfg.dev_impressions, true));
    splits.insert(Split::Test, make_split(&mut rng, cfg.test_impressions, false));

    let vocabulary = build_vocabulary(news.values(), 1, 100_000);
    PlantedDataset {
        corpus: UnifiedCorpus {
            dataset_name: "planted".to_string(),
            schema_version: SCHEMA_VERSION,
            news,
            vocabulary,
            splits,
        },
        preferences,
        news_category,
    }
}

/// One-hot category vectors plus Gaussian noise, one per news item, sorted by id.
pub fn category_embeddings(data: &PlantedDataset, noise_std: f64, seed: u64) -> Vec<(String, Vec<f64>)> {
    let dims = data.news_category.values().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).expect("noise std must be finite and non-negative");
    data.news_category
        .iter()
        .map(|(id, &c)| {
            let v = (0..dims)
                .map(|d| f64::from(u8::from(d == c)) + noise.sample(&mut rng))
                .collect();
            (id.clone(), v)
        })
        .collect()
}
