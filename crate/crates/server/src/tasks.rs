//! Job parameters: checked when a job is posted, executed later on a worker.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use newsrec::configuration::{resolve_config, ConfigError, ExperimentConfig, Violation};
use newsrec::corpus::download::dataset_source;
use newsrec::corpus::{adapter_for, download_dataset, preprocess, PreprocessOptions, Split};
use newsrec::runner::{evaluate_checkpoint, run_training, Phase, TestOutcome, TrainControl, Tracker};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::jobs::{Job, JobKind, JobResult, JobSink};
use crate::ServerConfig;

/// Reasons a posted job is refused.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    /// Failed constraints, reported together.
    Invalid(Vec<Violation>),
    /// Anything else wrong with the request, as one message.
    BadRequest(String),
}

fn violation(key: &str, value: impl ToString, constraint: impl ToString) -> Rejection {
    Rejection::Invalid(vec![Violation { key: key.into(), value: value.to_string(), constraint: constraint.to_string() }])
}

impl From<ConfigError> for Rejection {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(v) => Rejection::Invalid(v),
            ConfigError::Coercion { key, value, expected } => {
                Rejection::Invalid(vec![Violation { key, value, constraint: format!("expected {expected}") }])
            }
            other => Rejection::BadRequest(other.to_string()),
        }
    }
}

/// Overrides as `key=value` strings or as a (possibly nested) JSON object.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Overrides {
    List(Vec<String>),
    Map(serde_json::Map<String, Value>),
}

impl Default for Overrides {
    fn default() -> Self {
        Overrides::List(Vec::new())
    }
}

impl Overrides {
    pub fn to_pairs(&self) -> Result<Vec<String>, Rejection> {
        fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) -> Result<(), Rejection> {
            match v {
                Value::Object(m) => {
                    for (k, v) in m {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&key, v, out)?;
                    }
                }
                Value::String(s) => out.push(format!("{prefix}={s}")),
                Value::Number(n) => out.push(format!("{prefix}={n}")),
                Value::Bool(b) => out.push(format!("{prefix}={b}")),
                Value::Null => out.push(format!("{prefix}=null")),
                Value::Array(_) => {
                    return Err(Rejection::BadRequest(format!("override `{prefix}` is a list; only scalars can be set")))
                }
            }
            Ok(())
        }
        match self {
            Overrides::List(l) => Ok(l.clone()),
            Overrides::Map(m) => {
                let mut out = Vec::new();
                walk("", &Value::Object(m.clone()), &mut out)?;
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DownloadParams {
    dataset: String,
    dir: Option<PathBuf>,
    mirror: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreprocessParams {
    dataset: String,
    raw_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    min_freq: Option<usize>,
    max_vocab_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainParams {
    model: String,
    #[serde(default)]
    overrides: Overrides,
    resume_from: Option<PathBuf>,
    #[serde(default)]
    allow_fingerprint_mismatch: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateParams {
    checkpoint: PathBuf,
    split: String,
    corpus_dir: Option<PathBuf>,
    predictions: Option<PathBuf>,
}

/// A validated job, ready to run.
#[derive(Debug, Clone)]
pub enum Task {
    Download { dataset: String, dir: PathBuf, mirror: Option<String> },
    Preprocess { dataset: String, raw_dir: PathBuf, out_dir: PathBuf, options: PreprocessOptions },
    Train { config: Box<ExperimentConfig>, control: TrainControl },
    Evaluate { checkpoint: PathBuf, split: Split, corpus_dir: Option<PathBuf>, predictions: Option<PathBuf> },
}

fn parse<T: for<'de> Deserialize<'de>>(params: &Value) -> Result<T, Rejection> {
    let params = if params.is_null() { json!({}) } else { params.clone() };
    serde_json::from_value(params).map_err(|e| Rejection::BadRequest(format!("bad parameters: {e}")))
}

/// Raw and corpus directories the server uses for a dataset.
pub fn dataset_dirs(data_dir: &Path, dataset: &str) -> (PathBuf, PathBuf) {
    let base = data_dir.join(dataset);
    (base.join("raw"), base.join("corpus"))
}

impl Task {
    /// Checks `params` for a job of `kind`. Training parameters resolve
    /// through the same configuration code as the command line, with the
    /// server's run directory applied before the caller's overrides.
    pub fn prepare(kind: JobKind, params: &Value, server: &ServerConfig) -> Result<Task, Rejection> {
        match kind {
            JobKind::Download => {
                let p: DownloadParams = parse(params)?;
                dataset_source(&p.dataset).map_err(|e| violation("dataset", &p.dataset, e))?;
                let dir = p.dir.unwrap_or_else(|| dataset_dirs(&server.data_dir, &p.dataset).0);
                Ok(Task::Download { dataset: p.dataset, dir, mirror: p.mirror })
            }
            JobKind::Preprocess => {
                let p: PreprocessParams = parse(params)?;
                adapter_for(&p.dataset).map_err(|e| violation("dataset", &p.dataset, e))?;
                let defaults = PreprocessOptions::default();
                let options = PreprocessOptions {
                    min_freq: p.min_freq.unwrap_or(defaults.min_freq),
                    max_vocab_size: p.max_vocab_size.unwrap_or(defaults.max_vocab_size),
                };
                if options.max_vocab_size < 2 {
                    return Err(violation("max_vocab_size", options.max_vocab_size, "must be at least 2"));
                }
                let (raw, out) = dataset_dirs(&server.data_dir, &p.dataset);
                Ok(Task::Preprocess {
                    dataset: p.dataset,
                    raw_dir: p.raw_dir.unwrap_or(raw),
                    out_dir: p.out_dir.unwrap_or(out),
                    options,
                })
            }
            JobKind::Train => {
                let p: TrainParams = parse(params)?;
                let mut overrides = vec![format!("output_dir={}", server.runs_dir.display())];
                overrides.extend(p.overrides.to_pairs()?);
                let (config, warnings) = resolve_config(&p.model, &server.config_root, &overrides)?;
                for w in warnings {
                    log::warn!("{w}");
                }
                let control = TrainControl {
                    resume_from: p.resume_from,
                    allow_fingerprint_mismatch: p.allow_fingerprint_mismatch,
                    ..Default::default()
                };
                Ok(Task::Train { config: Box::new(config), control })
            }
            JobKind::Evaluate => {
                let p: EvaluateParams = parse(params)?;
                let split: Split = p.split.parse().map_err(|e| violation("split", &p.split, e))?;
                Ok(Task::Evaluate { checkpoint: p.checkpoint, split, corpus_dir: p.corpus_dir, predictions: p.predictions })
            }
        }
    }

    /// Runs the job on the calling thread. Training events come from the run
    /// itself; the other kinds report a start and an end status.
    pub fn execute(self, job: &Arc<Job>) -> Result<JobResult, (Option<JobResult>, String)> {
        if let Task::Train { config, control } = self {
            let out = run_training(&config, &control, Some(Box::new(JobSink(job.clone())))).map_err(|e| (None, e.to_string()))?;
            let result = JobResult::Run {
                run_id: out.state.run_id.clone(),
                run_dir: out.run_dir.display().to_string(),
                phase: out.state.phase.as_str().to_string(),
                final_dev: out.final_dev.clone(),
            };
            return match out.state.phase {
                Phase::Failed => Err((Some(result), out.state.failure.unwrap_or_else(|| "training failed".into()))),
                _ => Ok(result),
            };
        }
        let mut tracker = Tracker::new(job.id(), Box::new(JobSink(job.clone())), 0);
        tracker.status("phase", 0, json!({"phase": "running"}));
        let outcome = self.execute_data();
        match &outcome {
            Ok(result) => {
                tracker.scalar("progress", 0, 1.0);
                tracker.status("phase", 0, json!({"phase": "finished", "result": result}));
            }
            Err(message) => tracker.status("phase", 0, json!({"phase": "failed", "reason": message})),
        }
        tracker.flush();
        outcome.map_err(|m| (None, m))
    }

    fn execute_data(self) -> Result<JobResult, String> {
        match self {
            Task::Download { dataset, dir, mirror } => {
                let m = download_dataset(&dataset, &dir, mirror.as_deref()).map_err(|e| e.to_string())?;
                Ok(JobResult::Download {
                    dir: dir.display().to_string(),
                    files: m.files.len(),
                    bytes_downloaded: m.bytes_downloaded,
                })
            }
            Task::Preprocess { dataset, raw_dir, out_dir, options } => {
                let (corpus, report) = preprocess(&dataset, &raw_dir, &out_dir, &options).map_err(|e| e.to_string())?;
                Ok(JobResult::Corpus {
                    dir: out_dir.display().to_string(),
                    news: corpus.news.len(),
                    impressions: corpus.splits.values().map(Vec::len).sum(),
                    skipped_rows: report.total(),
                })
            }
            Task::Evaluate { checkpoint, split, corpus_dir, predictions } => {
                match evaluate_checkpoint(&checkpoint, split, corpus_dir.as_deref(), predictions.as_deref())
                    .map_err(|e| e.to_string())?
                {
                    TestOutcome::Metrics(r) => Ok(JobResult::Metrics(r)),
                    TestOutcome::Predictions { path, impressions } => {
                        Ok(JobResult::Predictions { path: path.display().to_string(), impressions })
                    }
                }
            }
            Task::Train { .. } => unreachable!("training is handled by execute"),
        }
    }
}
