//! Independent train, validate and test phases with checkpoints and tracking.
//!
//! Training is deterministic for a given config: the per-epoch sampling seed
//! and any dropout masks are derived from the config seed, the epoch and the
//! global step only, so an interrupted run resumed from an epoch checkpoint
//! ends in the same state as an uninterrupted one.

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::configuration::ConfigError;
use crate::corpus::{CorpusError, Split};
use crate::metrics::prediction::PredictionError;
use crate::metrics::{EvalResult, MetricError};
use crate::models::ModelError;

pub mod checkpoint;
pub mod evaluate;
pub mod launch;
pub mod optimizer;
pub mod summary;
pub mod tracking;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use launch::{default_prediction_path, evaluate_checkpoint, run_training};
pub use evaluate::{load_for_evaluation, predict, test, validate, EvaluationSet, TestOutcome};
pub use optimizer::MomentumSgd;
pub use summary::{list_runs, prepare_run, RunContext, RunSummary, SUMMARY_FILE};
pub use tracking::{events_path, open_sink, read_events, run_sink, EventKind, FileSink, MemorySink, NullSink, TeeSink, Tracker, TrackingEvent, TrackingSink};
pub use train::{compute_gradients, train, train_run, StepGradients, TrainControl, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Idle,
    Training,
    Validating,
    Testing,
    Finished,
    Failed,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Training => "training",
            Phase::Validating => "validating",
            Phase::Testing => "testing",
            Phase::Finished => "finished",
            Phase::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub dev: Option<EvalResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub phase: Phase,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub best_dev_metric: Option<f64>,
    pub best_metric_name: String,
    pub best_epoch: Option<usize>,
    pub checkpoint_paths: Vec<PathBuf>,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    /// Next tracking sequence number, so a resumed run continues the stream.
    pub next_event_seq: u64,
    pub failure: Option<String>,
}

impl RunState {
    pub fn new(run_id: impl Into<String>, seed: u64) -> Self {
        Self {
            run_id: run_id.into(),
            phase: Phase::Idle,
            epoch: 0,
            step: 0,
            best_dev_metric: None,
            best_metric_name: "auc".into(),
            best_epoch: None,
            checkpoint_paths: Vec::new(),
            seed,
            history: Vec::new(),
            next_event_seq: 0,
            failure: None,
        }
    }

    pub fn last_dev(&self) -> Option<&EvalResult> {
        self.history.iter().rev().find_map(|r| r.dev.as_ref())
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
    #[error("the {0} split is empty")]
    EmptySplit(Split),
    #[error("the {0} split has unlabeled impressions; write predictions instead")]
    Unlabeled(Split),
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("checkpoint was written for config {found} but the current config is {expected}; pass the override flag to load it anyway")]
    FingerprintMismatch { expected: String, found: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl RunnerError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for one epoch's negative sampling and shuffling.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    splitmix(seed ^ splitmix(epoch as u64))
}
