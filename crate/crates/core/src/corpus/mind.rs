//! Parsers for the MIND tab-separated files.
//!
//! `news.tsv`: news_id, category, subcategory, title, abstract, url,
//! title_entities, abstract_entities.
//!
//! `behaviors.tsv`: impression_id, user_id, time, history, impressions. History
//! is space separated; impressions are `newsid-label` tokens (or bare `newsid`
//! in the unlabeled test split).

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;

use super::report::{reasons, ParseReport};
use super::tokenize::tokenize_text;
use super::types::{Candidate, ImpressionLog, NewsItem, Split};
use super::CorpusError;

const NEWS_COLUMNS: usize = 8;
const BEHAVIOR_COLUMNS: usize = 5;
const MIND_TIME_FORMAT: &str = "%m/%d/%Y %I:%M:%S %p";

/// Items parsed from a file plus the rows that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub report: ParseReport,
}

fn read_existing(file: &Path) -> Result<String, CorpusError> {
    if !file.is_file() {
        return Err(CorpusError::MissingFile(file.to_path_buf()));
    }
    fs::read_to_string(file).map_err(|e| CorpusError::io(file, e))
}

fn file_label(file: &Path) -> String {
    file.display().to_string()
}

pub fn parse_mind_news(file: &Path) -> Result<Parsed<NewsItem>, CorpusError> {
    let text = read_existing(file)?;
    Ok(parse_news_text(&text, &file_label(file)))
}

pub(crate) fn parse_news_text(text: &str, label: &str) -> Parsed<NewsItem> {
    let mut items = Vec::new();
    let mut report = ParseReport::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != NEWS_COLUMNS {
            report.reject(label, n + 1, reasons::COLUMN_COUNT);
            continue;
        }
        let news_id = cols[0].trim();
        if news_id.is_empty() {
            report.reject(label, n + 1, reasons::EMPTY_ID);
            continue;
        }
        let title_tokens = tokenize_text(cols[3]);
        if title_tokens.is_empty() {
            report.reject(label, n + 1, reasons::EMPTY_TITLE);
            continue;
        }
        items.push(NewsItem {
            news_id: news_id.to_string(),
            category: cols[1].trim().to_string(),
            subcategory: cols[2].trim().to_string(),
            title_tokens,
            abstract_tokens: tokenize_text(cols[4]),
            entities: parse_entities(cols[6], cols[7]),
        });
    }
    Parsed { items, report }
}

/// Collects `WikidataId`s from the two entity columns, first occurrence wins.
fn parse_entities(title: &str, abs: &str) -> Option<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    let mut any_parsed = false;
    for col in [title, abs] {
        let col = col.trim();
        if col.is_empty() {
            continue;
        }
        let Ok(serde_json::Value::Array(list)) = serde_json::from_str::<serde_json::Value>(col) else {
            continue;
        };
        any_parsed = true;
        for entity in list {
            if let Some(id) = entity.get("WikidataId").and_then(|v| v.as_str()) {
                if !out.iter().any(|e| e == id) {
                    out.push(id.to_string());
                }
            }
        }
    }
    any_parsed.then_some(out)
}

pub fn parse_mind_behaviors(file: &Path, split: Split) -> Result<Parsed<ImpressionLog>, CorpusError> {
    let text = read_existing(file)?;
    Ok(parse_behaviors_text(&text, split, &file_label(file)))
}

pub(crate) fn parse_behaviors_text(text: &str, _split: Split, label: &str) -> Parsed<ImpressionLog> {
    let mut items = Vec::new();
    let mut report = ParseReport::default();
    'rows: for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != BEHAVIOR_COLUMNS {
            report.reject(label, n + 1, reasons::COLUMN_COUNT);
            continue;
        }
        let (impression_id, user_id) = (cols[0].trim(), cols[1].trim());
        if impression_id.is_empty() || user_id.is_empty() {
            report.reject(label, n + 1, reasons::EMPTY_ID);
            continue;
        }
        let Some(timestamp) = parse_mind_time(cols[2]) else {
            report.reject(label, n + 1, reasons::BAD_TIMESTAMP);
            continue;
        };
        let history: Vec<String> = cols[3].split_whitespace().map(str::to_string).collect();
        let mut candidates = Vec::new();
        for token in cols[4].split_whitespace() {
            match parse_candidate(token) {
                Some(c) => candidates.push(c),
                None => {
                    report.reject(label, n + 1, reasons::INVALID_LABEL);
                    continue 'rows;
                }
            }
        }
        if candidates.is_empty() {
            report.reject(label, n + 1, reasons::EMPTY_CANDIDATES);
            continue;
        }
        items.push(ImpressionLog {
            impression_id: impression_id.to_string(),
            user_id: user_id.to_string(),
            timestamp,
            history,
            candidates,
        });
    }
    Parsed { items, report }
}

fn parse_candidate(token: &str) -> Option<Candidate> {
    match token.rsplit_once('-') {
        Some((id, label)) if !id.is_empty() => match label {
            "0" => Some(Candidate::labeled(id, 0)),
            "1" => Some(Candidate::labeled(id, 1)),
            _ => None,
        },
        Some(_) => None,
        None => Some(Candidate::unlabeled(token)),
    }
}

/// Parses MIND's `11/15/2019 8:55:22 AM` (read as UTC) or plain epoch seconds.
pub fn parse_mind_time(value: &str) -> Option<i64> {
    let value = value.trim();
    if let Ok(secs) = value.parse::<i64>() {
        return Some(secs);
    }
    NaiveDateTime::parse_from_str(value, MIND_TIME_FORMAT)
        .ok()
        .map(|t| t.and_utc().timestamp())
}

/// Expected location of a split's files under a MIND raw directory.
pub fn split_dir(raw_dir: &Path, split: Split) -> PathBuf {
    raw_dir.join(split.as_str())
}
