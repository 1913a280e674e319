//! On-disk corpus layout.
//!
//! ```text
//! <dir>/meta          JSON object: dataset_name, schema_version, counts
//! <dir>/news          one JSON NewsItem per line, sorted by news_id
//! <dir>/vocab         token<TAB>index per line, index order
//! <dir>/split_train   one JSON ImpressionLog per line
//! <dir>/split_dev
//! <dir>/split_test
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{ImpressionLog, NewsItem, Split, UnifiedCorpus, SCHEMA_VERSION};
use super::vocab::{Vocabulary, PAD_TOKEN, UNK_TOKEN};
use super::CorpusError;

pub const META_FILE: &str = "meta";
pub const NEWS_FILE: &str = "news";
pub const VOCAB_FILE: &str = "vocab";
pub const PARSE_REPORT_FILE: &str = "parse_report.json";

pub fn split_file_name(split: Split) -> String {
    format!("split_{}", split.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub dataset_name: String,
    pub schema_version: u32,
    pub counts: BTreeMap<String, usize>,
}

impl CorpusMeta {
    fn of(corpus: &UnifiedCorpus) -> Self {
        let mut counts = BTreeMap::new();
        counts.insert("news".to_string(), corpus.news.len());
        counts.insert("vocab".to_string(), corpus.vocabulary.size());
        for split in Split::ALL {
            counts.insert(split.as_str().to_string(), corpus.split(split).len());
        }
        Self { dataset_name: corpus.dataset_name.clone(), schema_version: corpus.schema_version, counts }
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).map_err(|e| CorpusError::format(path, e))?;
        writeln!(out, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn save_corpus(corpus: &UnifiedCorpus, dir: &Path) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let meta_path = dir.join(META_FILE);
    let meta = serde_json::to_string_pretty(&CorpusMeta::of(corpus)).map_err(|e| CorpusError::format(&meta_path, e))?;
    fs::write(&meta_path, meta + "\n").map_err(|e| CorpusError::io(&meta_path, e))?;

    write_lines(&dir.join(NEWS_FILE), corpus.news.values())?;

    let vocab_path = dir.join(VOCAB_FILE);
    let mut vocab_text = String::new();
    for (token, index) in corpus.vocabulary.entries() {
        vocab_text.push_str(token);
        vocab_text.push('\t');
        vocab_text.push_str(&index.to_string());
        vocab_text.push('\n');
    }
    fs::write(&vocab_path, vocab_text).map_err(|e| CorpusError::io(&vocab_path, e))?;

    for split in Split::ALL {
        write_lines(&dir.join(split_file_name(split)), corpus.split(split).iter())?;
    }
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line).map_err(|e| CorpusError::Format {
                file: path.to_path_buf(),
                message: format!("line {}: {e}", n + 1),
            })
        })
        .collect()
}

fn read_vocab(path: &Path) -> Result<Vocabulary, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let bad = |line: usize, msg: &str| CorpusError::Format { file: path.to_path_buf(), message: format!("line {line}: {msg}") };
    let mut tokens = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let (token, index) = line.rsplit_once('\t').ok_or_else(|| bad(n + 1, "expected token<TAB>index"))?;
        let index: usize = index.parse().map_err(|_| bad(n + 1, "index is not an integer"))?;
        if index != n {
            return Err(bad(n + 1, "indices must be contiguous from 0"));
        }
        let expected_special = match n {
            0 => Some(PAD_TOKEN),
            1 => Some(UNK_TOKEN),
            _ => None,
        };
        match expected_special {
            Some(s) if s != token => return Err(bad(n + 1, "PAD must be index 0 and UNK index 1")),
            Some(_) => {}
            None => tokens.push(token.to_string()),
        }
    }
    Vocabulary::from_tokens(tokens).map_err(|m| CorpusError::Format { file: path.to_path_buf(), message: m })
}

pub fn load_corpus(dir: &Path) -> Result<UnifiedCorpus, CorpusError> {
    let meta_path = dir.join(META_FILE);
    if !meta_path.is_file() {
        return Err(CorpusError::MissingCorpus(dir.to_path_buf()));
    }
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| CorpusError::io(&meta_path, e))?;
    let meta: CorpusMeta = serde_json::from_str(&meta_text).map_err(|e| CorpusError::format(&meta_path, e))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(CorpusError::SchemaMismatch { found: meta.schema_version, expected: SCHEMA_VERSION });
    }

    let news_items: Vec<NewsItem> = read_lines(&dir.join(NEWS_FILE))?;
    let news = news_items.into_iter().map(|n| (n.news_id.clone(), n)).collect();
    let vocabulary = read_vocab(&dir.join(VOCAB_FILE))?;
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let logs: Vec<ImpressionLog> = read_lines(&dir.join(split_file_name(split)))?;
        splits.insert(split, logs);
    }
    Ok(UnifiedCorpus {
        dataset_name: meta.dataset_name,
        schema_version: meta.schema_version,
        news,
        vocabulary,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{planted_corpus, PlantedConfig};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = planted_corpus(&PlantedConfig::small(3)).corpus;
        save_corpus(&corpus, dir.path()).unwrap();
        assert_eq!(load_corpus(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn empty_dir_is_missing_corpus() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(CorpusError::MissingCorpus(_))));
    }

    #[test]
    fn schema_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = planted_corpus(&PlantedConfig::small(1)).corpus;
        save_corpus(&corpus, dir.path()).unwrap();
        let meta = fs::read_to_string(dir.path().join(META_FILE)).unwrap();
        fs::write(dir.path().join(META_FILE), meta.replace("\"schema_version\": 1", "\"schema_version\": 99")).unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(CorpusError::SchemaMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn corrupt_file_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = planted_corpus(&PlantedConfig::small(1)).corpus;
        save_corpus(&corpus, dir.path()).unwrap();
        fs::write(dir.path().join("split_dev"), "{not json\n").unwrap();
        match load_corpus(dir.path()) {
            Err(CorpusError::Format { file, message }) => {
                assert!(file.ends_with("split_dev"));
                assert!(message.starts_with("line 1"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
