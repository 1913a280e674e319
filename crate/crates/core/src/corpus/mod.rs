//! Dataset acquisition and normalisation into the unified corpus format.

use std::fmt::Display;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod download;
pub mod ebnerd;
pub mod mind;
pub mod report;
pub mod sampling;
pub mod store;
pub mod synth;
pub mod tokenize;
pub mod types;
pub mod unify;
pub mod vocab;

pub use download::{download_dataset, DownloadManifest};
pub use mind::{parse_mind_behaviors, parse_mind_news};
pub use report::ParseReport;
pub use sampling::sample_training_pairs;
pub use store::{load_corpus, save_corpus};
pub use tokenize::tokenize_text;
pub use types::{Candidate, ImpressionLog, NewsItem, Split, TrainingSample, UnifiedCorpus, PAD_NEWS_ID, SCHEMA_VERSION};
pub use unify::{adapter_for, to_unified_corpus, DatasetAdapter, MindAdapter, PreprocessOptions};
pub use vocab::{build_vocabulary, encode_tokens, Vocabulary};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown dataset `{0}` (known: mind-small, mind-large, ebnerd-demo)")]
    UnknownDataset(String),
    #[error("no adapter for dataset `{0}` (expected a mind* or ebnerd* dataset)")]
    UnknownAdapter(String),
    #[error("required file {0} is missing")]
    MissingFile(PathBuf),
    #[error("no corpus found in {0} (missing `meta`)")]
    MissingCorpus(PathBuf),
    #[error("corpus schema version {found} cannot be read by this build (expects {expected}); re-run preprocessing to migrate")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("{}: {message}", file.display())]
    Format { file: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("impression {impression_id} references unknown news id {news_id}")]
    UnresolvedNews { news_id: String, impression_id: String },
    #[error("download of {url} failed after {attempts} attempts: {message}")]
    Network { url: String, attempts: u32, message: String },
    #[error("hash mismatch for {}: expected {expected}, got {actual} (partial file removed)", file.display())]
    HashMismatch { file: PathBuf, expected: String, actual: String },
    #[error("{} is locked by another download", .0.display())]
    Locked(PathBuf),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, err: impl Display) -> Self {
        Self::Format { file: path.to_path_buf(), message: err.to_string() }
    }
}

/// Builds the unified corpus for `dataset_name` from `raw_dir` and writes it,
/// with its parse report, to `out_dir`.
pub fn preprocess(
    dataset_name: &str,
    raw_dir: &Path,
    out_dir: &Path,
    options: &PreprocessOptions,
) -> Result<(UnifiedCorpus, ParseReport), CorpusError> {
    let adapter = adapter_for(dataset_name)?;
    let (corpus, report) = to_unified_corpus(dataset_name, raw_dir, adapter.as_ref(), options)?;
    save_corpus(&corpus, out_dir)?;
    report.write(&out_dir.join(store::PARSE_REPORT_FILE))?;
    Ok((corpus, report))
}
