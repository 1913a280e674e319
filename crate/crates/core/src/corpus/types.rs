use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;

/// Version of the on-disk corpus layout written by [`super::save_corpus`].
pub const SCHEMA_VERSION: u32 = 1;

/// Placeholder news id used to fill history slots and to stand in for
/// negatives when an impression has none. It never appears in a corpus.
pub const PAD_NEWS_ID: &str = "<pad-news>";

/// One news article after preprocessing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub title_tokens: Vec<String>,
    pub abstract_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<String>>,
}

/// A candidate shown in an impression. `label` is `None` for unlabeled test data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub news_id: String,
    pub label: Option<u8>,
}

impl Candidate {
    pub fn labeled(news_id: impl Into<String>, label: u8) -> Self {
        Self { news_id: news_id.into(), label: Some(label) }
    }

    pub fn unlabeled(news_id: impl Into<String>) -> Self {
        Self { news_id: news_id.into(), label: None }
    }

    pub fn is_positive(&self) -> bool {
        self.label == Some(1)
    }
}

/// One user impression: the click history at the time plus the candidates shown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionLog {
    pub impression_id: String,
    pub user_id: String,
    pub timestamp: i64,
    /// Oldest click first.
    pub history: Vec<String>,
    pub candidates: Vec<Candidate>,
}

impl ImpressionLog {
    /// True when every candidate carries a label.
    pub fn is_labeled(&self) -> bool {
        self.candidates.iter().all(|c| c.label.is_some())
    }

    pub fn labels(&self) -> Option<Vec<u8>> {
        self.candidates.iter().map(|c| c.label).collect()
    }

    pub fn positives(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.is_positive())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.label == Some(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, dev or test)")),
        }
    }
}

/// The normalised dataset shared by every model.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedCorpus {
    pub dataset_name: String,
    pub schema_version: u32,
    pub news: BTreeMap<String, NewsItem>,
    pub vocabulary: Vocabulary,
    pub splits: BTreeMap<Split, Vec<ImpressionLog>>,
}

impl UnifiedCorpus {
    pub fn split(&self, split: Split) -> &[ImpressionLog] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Returns the first news id (in split/impression/history/candidate order)
    /// that does not resolve in the news table.
    pub fn first_unresolved_id(&self) -> Option<(&str, &str)> {
        for split in Split::ALL {
            for imp in self.split(split) {
                let ids = imp
                    .history
                    .iter()
                    .chain(imp.candidates.iter().map(|c| &c.news_id));
                for id in ids {
                    if !self.news.contains_key(id) {
                        return Some((imp.impression_id.as_str(), id.as_str()));
                    }
                }
            }
        }
        None
    }
}

/// A training example: one clicked candidate paired with `K` non-clicked ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub impression_id: String,
    pub user_id: String,
    /// Exactly `H` entries, most recent clicks kept, padded with [`PAD_NEWS_ID`].
    pub history: Vec<String>,
    pub positive: String,
    pub negatives: Vec<String>,
    /// Every positive of the source impression (the graph model keeps these
    /// out of the user's neighbourhood while training).
    pub impression_positives: Vec<String>,
}
