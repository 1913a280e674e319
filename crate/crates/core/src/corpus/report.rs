use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub file: String,
    /// 1-based line number in the source file (0 when not line-oriented).
    pub line: usize,
    pub reason: String,
}

/// Rows skipped while parsing raw files, with per-reason counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rejected: Vec<RejectedRow>,
    pub counts: BTreeMap<String, usize>,
}

impl ParseReport {
    pub fn reject(&mut self, file: impl Into<String>, line: usize, reason: impl Into<String>) {
        let reason = reason.into();
        *self.counts.entry(reason.clone()).or_default() += 1;
        self.rejected.push(RejectedRow { file: file.into(), line, reason });
    }

    pub fn total(&self) -> usize {
        self.rejected.len()
    }

    pub fn count(&self, reason: &str) -> usize {
        self.counts.get(reason).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: ParseReport) {
        for row in other.rejected {
            self.reject(row.file, row.line, row.reason);
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CorpusError::format(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| CorpusError::io(path, e))
    }
}

pub mod reasons {
    pub const COLUMN_COUNT: &str = "wrong column count";
    pub const EMPTY_TITLE: &str = "empty title";
    pub const EMPTY_ID: &str = "empty id";
    pub const DUPLICATE_ID: &str = "duplicate news id";
    pub const INVALID_LABEL: &str = "invalid label";
    pub const EMPTY_CANDIDATES: &str = "empty candidates";
    pub const BAD_TIMESTAMP: &str = "unparseable timestamp";
    pub const NO_POSITIVE: &str = "no positive candidate in training split";
    pub const BAD_RECORD: &str = "malformed record";
}
