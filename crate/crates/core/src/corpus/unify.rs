use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ebnerd::EbnerdAdapter;
use super::mind::{parse_mind_behaviors, parse_mind_news, split_dir};
use super::report::{reasons, ParseReport};
use super::types::{ImpressionLog, NewsItem, Split, UnifiedCorpus, SCHEMA_VERSION};
use super::vocab::build_vocabulary;
use super::CorpusError;

/// Everything an adapter extracts from a raw dataset directory, before
/// vocabulary construction and validation.
#[derive(Debug, Clone, Default)]
pub struct RawDataset {
    pub news: Vec<NewsItem>,
    pub splits: BTreeMap<Split, Vec<ImpressionLog>>,
    pub report: ParseReport,
}

/// Turns one dataset's raw files into news items and impression logs.
pub trait DatasetAdapter {
    fn name(&self) -> &'static str;

    /// Files that must be present before [`DatasetAdapter::read`] is attempted.
    fn required_files(&self, raw_dir: &Path) -> Vec<PathBuf>;

    fn read(&self, raw_dir: &Path) -> Result<RawDataset, CorpusError>;
}

/// MIND layout: `raw_dir/{train,dev,test}/{news,behaviors}.tsv`; dev and test are optional.
pub struct MindAdapter;

impl DatasetAdapter for MindAdapter {
    fn name(&self) -> &'static str {
        "mind"
    }

    fn required_files(&self, raw_dir: &Path) -> Vec<PathBuf> {
        let train = split_dir(raw_dir, Split::Train);
        vec![train.join("news.tsv"), train.join("behaviors.tsv")]
    }

    fn read(&self, raw_dir: &Path) -> Result<RawDataset, CorpusError> {
        for file in self.required_files(raw_dir) {
            if !file.is_file() {
                return Err(CorpusError::MissingFile(file));
            }
        }
        let mut raw = RawDataset::default();
        for split in Split::ALL {
            let dir = split_dir(raw_dir, split);
            let news_file = dir.join("news.tsv");
            if news_file.is_file() {
                let parsed = parse_mind_news(&news_file)?;
                raw.news.extend(parsed.items);
                raw.report.merge(parsed.report);
            }
            let behaviors = dir.join("behaviors.tsv");
            let logs = if behaviors.is_file() {
                let parsed = parse_mind_behaviors(&behaviors, split)?;
                raw.report.merge(parsed.report);
                parsed.items
            } else {
                Vec::new()
            };
            raw.splits.insert(split, logs);
        }
        Ok(raw)
    }
}

/// Picks the adapter for a dataset name (`mind*` or `ebnerd*`), or by adapter name.
pub fn adapter_for(dataset_name: &str) -> Result<Box<dyn DatasetAdapter>, CorpusError> {
    if dataset_name.starts_with("mind") {
        Ok(Box::new(MindAdapter))
    } else if dataset_name.starts_with("ebnerd") {
        Ok(Box::new(EbnerdAdapter))
    } else {
        Err(CorpusError::UnknownAdapter(dataset_name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub min_freq: usize,
    pub max_vocab_size: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self { min_freq: 1, max_vocab_size: 100_000 }
    }
}

/// Normalises an adapter's output and checks the corpus invariants.
///
/// Duplicate news ids keep the first record; training impressions without a
/// click are dropped into the report. A history or candidate id that does not
/// resolve is a hard error.
pub fn to_unified_corpus(
    dataset_name: &str,
    raw_dir: &Path,
    adapter: &dyn DatasetAdapter,
    options: &PreprocessOptions,
) -> Result<(UnifiedCorpus, ParseReport), CorpusError> {
    let raw = adapter.read(raw_dir)?;
    unify(dataset_name, raw, options)
}

pub fn unify(
    dataset_name: &str,
    raw: RawDataset,
    options: &PreprocessOptions,
) -> Result<(UnifiedCorpus, ParseReport), CorpusError> {
    let mut report = raw.report;
    let mut news: BTreeMap<String, NewsItem> = BTreeMap::new();
    for item in raw.news {
        match news.get(&item.news_id) {
            None => {
                news.insert(item.news_id.clone(), item);
            }
            Some(existing) if *existing == item => {}
            Some(_) => report.reject(format!("news {}", item.news_id), 0, reasons::DUPLICATE_ID),
        }
    }

    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let mut logs = raw.splits.get(&split).cloned().unwrap_or_default();
        if split == Split::Train {
            logs.retain(|imp| {
                let keep = !imp.is_labeled() || imp.positives().next().is_some();
                if !keep {
                    report.reject(format!("train impression {}", imp.impression_id), 0, reasons::NO_POSITIVE);
                }
                keep
            });
        }
        splits.insert(split, logs);
    }

    let vocabulary = build_vocabulary(news.values(), options.min_freq, options.max_vocab_size);
    let corpus = UnifiedCorpus {
        dataset_name: dataset_name.to_string(),
        schema_version: SCHEMA_VERSION,
        news,
        vocabulary,
        splits,
    };
    if let Some((impression, id)) = corpus.first_unresolved_id() {
        return Err(CorpusError::UnresolvedNews {
            news_id: id.to_string(),
            impression_id: impression.to_string(),
        });
    }
    Ok((corpus, report))
}
