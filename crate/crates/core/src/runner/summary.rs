//! Run directories and the `summary.json` each run leaves behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Phase, RunState, RunnerError};
use crate::configuration::{summary, ExperimentConfig};
use crate::metrics::EvalResult;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq)]
pub struct RunContext {
    pub run_id: String,
    pub run_dir: PathBuf,
}

/// Creates `output_dir/<run_id>`, where the id is a fingerprint prefix plus
/// a UTC timestamp (with a numeric suffix if that directory already exists).
pub fn prepare_run(config: &ExperimentConfig) -> Result<RunContext, RunnerError> {
    fs::create_dir_all(&config.output_dir).map_err(|e| RunnerError::io(&config.output_dir, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3f");
    let base = format!("{}-{stamp}", &config.fingerprint()[..12]);
    let mut run_id = base.clone();
    for n in 2.. {
        let dir = config.output_dir.join(&run_id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(RunContext { run_id, run_dir: dir }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => run_id = format!("{base}-{n}"),
            Err(e) => return Err(RunnerError::io(dir, e)),
        }
    }
    unreachable!()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub model_name: String,
    pub dataset_name: String,
    pub phase: Phase,
    pub epochs_completed: usize,
    pub step: u64,
    pub fingerprint: String,
    pub config: BTreeMap<String, String>,
    /// Dev metrics after the last completed epoch.
    pub final_dev: Option<EvalResult>,
    pub best_dev_auc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
    pub failure: Option<String>,
    pub updated_at: String,
}

impl RunSummary {
    pub fn new(config: &ExperimentConfig, state: &RunState, run_dir: &Path) -> Self {
        let best = run_dir.join(super::train::BEST_CHECKPOINT);
        RunSummary {
            run_id: state.run_id.clone(),
            model_name: config.model_name.clone(),
            dataset_name: config.dataset_name.clone(),
            phase: state.phase,
            epochs_completed: state.epoch,
            step: state.step,
            fingerprint: config.fingerprint(),
            config: summary(config),
            final_dev: state.last_dev().cloned(),
            best_dev_auc: state.best_dev_metric,
            best_epoch: state.best_epoch,
            best_checkpoint: best.exists().then_some(best),
            last_checkpoint: state.checkpoint_paths.last().cloned(),
            failure: state.failure.clone(),
            updated_at: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn write(&self, run_dir: &Path) -> Result<(), RunnerError> {
        let path = run_dir.join(SUMMARY_FILE);
        let text = serde_json::to_string_pretty(self).expect("summary serialises");
        fs::write(&path, text).map_err(|e| RunnerError::io(path, e))
    }

    pub fn read(run_dir: &Path) -> Result<Self, RunnerError> {
        let path = run_dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(|e| RunnerError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| RunnerError::Checkpoint { path, message: e.to_string() })
    }
}

/// Every readable run summary under `output_dir`, sorted by run id.
/// Unreadable summaries are skipped with a warning.
pub fn list_runs(output_dir: &Path) -> Vec<RunSummary> {
    let Ok(entries) = fs::read_dir(output_dir) else {
        return Vec::new();
    };
    let mut runs: Vec<RunSummary> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().join(SUMMARY_FILE).is_file())
        .filter_map(|e| match RunSummary::read(&e.path()) {
            Ok(s) => Some(s),
            Err(err) => {
                log::warn!("skipping run {}: {err}", e.path().display());
                None
            }
        })
        .collect();
    runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    runs
}
