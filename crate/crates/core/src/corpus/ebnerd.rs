//! EB-NeRD adapter.
//!
//! EB-NeRD ships parquet tables. The adapter reads JSON Lines exports of those
//! tables (one object per row, e.g. `pandas.read_parquet(p).to_json(out,
//! orient="records", lines=True)`) laid out as:
//!
//! ```text
//! raw_dir/articles.jsonl
//! raw_dir/{train,validation,test}/behaviors.jsonl
//! raw_dir/{train,validation,test}/history.jsonl
//! ```
//!
//! Field mapping into the unified schema:
//!
//! | unified              | EB-NeRD                                        |
//! |----------------------|------------------------------------------------|
//! | news_id              | `article_id` (stringified)                     |
//! | category             | `category_str`                                 |
//! | subcategory          | first element of `subcategory`, else empty     |
//! | title_tokens         | `title`                                        |
//! | abstract_tokens      | `subtitle`                                     |
//! | entities             | `entity_groups`                                |
//! | impression_id        | `impression_id`                                |
//! | user_id              | `user_id`                                      |
//! | timestamp            | `impression_time` (ISO string, or epoch s/ms)  |
//! | history              | `history.article_id_fixed` joined on `user_id` |
//! | candidates           | `article_ids_inview`                           |
//! | label                | 1 if in `article_ids_clicked`, absent on test  |

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde_json::Value;

use super::report::{reasons, ParseReport};
use super::tokenize::tokenize_text;
use super::types::{Candidate, ImpressionLog, NewsItem, Split};
use super::unify::{DatasetAdapter, RawDataset};
use super::CorpusError;

pub struct EbnerdAdapter;

fn split_dir_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Dev => "validation",
        Split::Test => "test",
    }
}

impl DatasetAdapter for EbnerdAdapter {
    fn name(&self) -> &'static str {
        "ebnerd"
    }

    fn required_files(&self, raw_dir: &Path) -> Vec<PathBuf> {
        vec![
            raw_dir.join("articles.jsonl"),
            raw_dir.join("train/behaviors.jsonl"),
            raw_dir.join("train/history.jsonl"),
        ]
    }

    fn read(&self, raw_dir: &Path) -> Result<RawDataset, CorpusError> {
        for file in self.required_files(raw_dir) {
            if !file.is_file() {
                return Err(CorpusError::MissingFile(file));
            }
        }
        let mut report = ParseReport::default();
        let articles = raw_dir.join("articles.jsonl");
        let news = parse_articles(&read(&articles)?, &articles.display().to_string(), &mut report);

        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let dir = raw_dir.join(split_dir_name(split));
            let behaviors = dir.join("behaviors.jsonl");
            if !behaviors.is_file() {
                splits.insert(split, Vec::new());
                continue;
            }
            let history_file = dir.join("history.jsonl");
            let histories = if history_file.is_file() {
                parse_history(&read(&history_file)?, &history_file.display().to_string(), &mut report)
            } else {
                HashMap::new()
            };
            let logs = parse_behaviors(
                &read(&behaviors)?,
                &histories,
                &behaviors.display().to_string(),
                &mut report,
            );
            splits.insert(split, logs);
        }
        Ok(RawDataset { news, splits, report })
    }
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn id_list(v: Option<&Value>) -> Option<Vec<String>> {
    match v? {
        Value::Array(items) => items.iter().map(id_string).collect(),
        Value::Null => None,
        _ => None,
    }
}

fn records<'a>(
    text: &'a str,
    label: &'a str,
    report: &'a mut ParseReport,
) -> impl Iterator<Item = (usize, serde_json::Map<String, Value>)> + 'a {
    text.lines().enumerate().filter_map(move |(n, line)| {
        if line.trim().is_empty() {
            return None;
        }
        match serde_json::from_str::<Value>(line) {
            Ok(Value::Object(map)) => Some((n + 1, map)),
            _ => {
                report.reject(label, n + 1, reasons::BAD_RECORD);
                None
            }
        }
    })
}

pub(crate) fn parse_articles(text: &str, label: &str, report: &mut ParseReport) -> Vec<NewsItem> {
    let mut rows = Vec::new();
    for (line, rec) in records(text, label, report) {
        rows.push((line, rec));
    }
    let mut out = Vec::new();
    for (line, rec) in rows {
        let Some(news_id) = rec.get("article_id").and_then(id_string) else {
            report.reject(label, line, reasons::EMPTY_ID);
            continue;
        };
        let title_tokens = tokenize_text(rec.get("title").and_then(Value::as_str).unwrap_or(""));
        if title_tokens.is_empty() {
            report.reject(label, line, reasons::EMPTY_TITLE);
            continue;
        }
        let subcategory = rec
            .get("subcategory")
            .and_then(|v| match v {
                Value::Array(a) => a.first().and_then(id_string),
                other => id_string(other),
            })
            .unwrap_or_default();
        out.push(NewsItem {
            news_id,
            category: rec.get("category_str").and_then(Value::as_str).unwrap_or("").to_string(),
            subcategory,
            title_tokens,
            abstract_tokens: tokenize_text(rec.get("subtitle").and_then(Value::as_str).unwrap_or("")),
            entities: id_list(rec.get("entity_groups")),
        });
    }
    out
}

fn parse_history(text: &str, label: &str, report: &mut ParseReport) -> HashMap<String, Vec<String>> {
    let mut rows = Vec::new();
    for (line, rec) in records(text, label, report) {
        rows.push((line, rec));
    }
    let mut out = HashMap::new();
    for (line, rec) in rows {
        match (rec.get("user_id").and_then(id_string), id_list(rec.get("article_id_fixed"))) {
            (Some(user), Some(hist)) => {
                out.insert(user, hist);
            }
            _ => report.reject(label, line, reasons::BAD_RECORD),
        }
    }
    out
}

fn parse_time(v: Option<&Value>) -> Option<i64> {
    match v? {
        Value::Number(n) => {
            let raw = n.as_i64()?;
            // pandas exports datetimes as epoch milliseconds by default
            Some(if raw.abs() > 100_000_000_000 { raw / 1000 } else { raw })
        }
        Value::String(s) => {
            let s = s.trim_end_matches('Z');
            NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
                .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
                .ok()
                .map(|t| t.and_utc().timestamp())
        }
        _ => None,
    }
}

fn parse_behaviors(
    text: &str,
    histories: &HashMap<String, Vec<String>>,
    label: &str,
    report: &mut ParseReport,
) -> Vec<ImpressionLog> {
    let mut rows = Vec::new();
    for (line, rec) in records(text, label, report) {
        rows.push((line, rec));
    }
    let mut out = Vec::new();
    for (line, rec) in rows {
        let (Some(impression_id), Some(user_id)) = (
            rec.get("impression_id").and_then(id_string),
            rec.get("user_id").and_then(id_string),
        ) else {
            report.reject(label, line, reasons::EMPTY_ID);
            continue;
        };
        let Some(timestamp) = parse_time(rec.get("impression_time")) else {
            report.reject(label, line, reasons::BAD_TIMESTAMP);
            continue;
        };
        let inview = id_list(rec.get("article_ids_inview")).unwrap_or_default();
        if inview.is_empty() {
            report.reject(label, line, reasons::EMPTY_CANDIDATES);
            continue;
        }
        let clicked = id_list(rec.get("article_ids_clicked"));
        let candidates = inview
            .into_iter()
            .map(|id| match &clicked {
                Some(c) => {
                    let label = u8::from(c.contains(&id));
                    Candidate::labeled(id, label)
                }
                None => Candidate::unlabeled(id),
            })
            .collect();
        out.push(ImpressionLog {
            impression_id,
            history: histories.get(&user_id).cloned().unwrap_or_default(),
            user_id,
            timestamp,
            candidates,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn articles_map_fields() {
        let text = r#"{"article_id": 3001353, "title": "Natascha var ikke den første", "subtitle": "Politiet frygter", "category_str": "krimi", "subcategory": [133, 7], "entity_groups": ["PER"]}
{"article_id": 3001354, "title": "", "category_str": "x"}
not json
"#;
        let mut report = ParseReport::default();
        let news = parse_articles(text, "articles.jsonl", &mut report);
        assert_eq!(news.len(), 1);
        assert_eq!(news[0].news_id, "3001353");
        assert_eq!(news[0].subcategory, "133");
        assert_eq!(news[0].title_tokens[0], "natascha");
        assert_eq!(news[0].entities, Some(vec!["PER".to_string()]));
        assert_eq!(report.count(reasons::EMPTY_TITLE), 1);
        assert_eq!(report.count(reasons::BAD_RECORD), 1);
    }

    #[test]
    fn behaviors_join_history_and_labels() {
        let mut report = ParseReport::default();
        let hist = parse_history(r#"{"user_id": 22, "article_id_fixed": [1, 2]}"#, "h", &mut report);
        let text = r#"{"impression_id": 5, "user_id": 22, "impression_time": "2023-05-21T21:06:50", "article_ids_inview": [3, 4], "article_ids_clicked": [4]}
{"impression_id": 6, "user_id": 23, "impression_time": 1684703210000, "article_ids_inview": [3]}"#;
        let logs = parse_behaviors(text, &hist, "b", &mut report);
        assert_eq!(logs[0].history, ["1", "2"]);
        assert_eq!(logs[0].candidates, [Candidate::labeled("3", 0), Candidate::labeled("4", 1)]);
        assert_eq!(logs[0].timestamp, 1_684_703_210);
        assert!(logs[1].history.is_empty());
        assert_eq!(logs[1].timestamp, 1_684_703_210);
        assert!(!logs[1].is_labeled());
    }
}
