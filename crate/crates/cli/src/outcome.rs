use std::path::PathBuf;

use newsrec::configuration::ConfigError;
use newsrec::corpus::CorpusError;
use newsrec::runner::RunnerError;
use serde_json::{json, Value};

/// Why a command stopped: bad input from the user (exit 1) or a failure
/// inside the pipeline (exit 2).
#[derive(Debug)]
pub enum Failure {
    User(String),
    Pipeline(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::User(e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::UnknownDataset(_) | CorpusError::UnknownAdapter(_) | CorpusError::Locked(_) => {
                Failure::User(e.to_string())
            }
            other => Failure::Pipeline(other.to_string()),
        }
    }
}

impl From<RunnerError> for Failure {
    fn from(e: RunnerError) -> Self {
        match e {
            RunnerError::Config(c) => c.into(),
            RunnerError::Corpus(c) => c.into(),
            RunnerError::FingerprintMismatch { .. } | RunnerError::Unlabeled(_) => Failure::User(e.to_string()),
            other => Failure::Pipeline(other.to_string()),
        }
    }
}

#[derive(Debug)]
pub struct CommandOutcome {
    pub code: u8,
    pub summary: String,
    pub result: Value,
    /// File or directory the command produced, if any.
    pub result_path: Option<PathBuf>,
}

impl CommandOutcome {
    pub fn ok(summary: impl Into<String>, result: Value, result_path: Option<PathBuf>) -> Self {
        Self { code: 0, summary: summary.into(), result, result_path }
    }

    pub fn failed(f: Failure) -> Self {
        let (code, summary) = match f {
            Failure::User(m) => (1, m),
            Failure::Pipeline(m) => (2, m),
        };
        Self { code, summary, result: Value::Null, result_path: None }
    }

    pub fn print(&self, command: &str, json_mode: bool) {
        if json_mode {
            let line = json!({
                "command": command,
                "ok": self.code == 0,
                "exit_code": self.code,
                "summary": self.summary,
                "result": self.result,
                "result_path": self.result_path,
            });
            println!("{line}");
        } else if self.code == 0 {
            println!("{}", self.summary);
        } else {
            eprintln!("error: {}", self.summary);
        }
    }
}
