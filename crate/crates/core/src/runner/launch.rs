//! Whole-pipeline entry points shared by the command line and the server,
//! so both front ends run exactly the same steps.

use std::path::{Path, PathBuf};

use super::checkpoint::load_checkpoint;
use super::evaluate::{load_for_evaluation, predict, validate, TestOutcome};
use super::summary::{prepare_run, RunContext};
use super::tracking::{open_sink, NullSink, TeeSink, TrackingSink};
use super::train::{train_run, TrainControl, TrainOutcome};
use super::RunnerError;
use crate::configuration::ExperimentConfig;
use crate::corpus::{load_corpus, Split};

/// Loads the corpus named by `config` and trains it.
///
/// Fresh runs get a new directory under `config.output_dir`; a resumed run
/// continues in the directory of the checkpoint it starts from. `extra`
/// receives every tracking event alongside the configured sink.
pub fn run_training(
    config: &ExperimentConfig,
    control: &TrainControl,
    extra: Option<Box<dyn TrackingSink>>,
) -> Result<TrainOutcome, RunnerError> {
    let corpus = load_corpus(&config.corpus_dir)?;
    let ctx = match &control.resume_from {
        None => prepare_run(config)?,
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let run_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
            RunContext { run_id: ckpt.state.run_id, run_dir }
        }
    };
    // a sink that cannot be opened costs the events, not the run
    let sink = match open_sink(&config.tracking, &ctx.run_dir) {
        Ok(base) => match extra {
            Some(x) => Box::new(TeeSink(vec![base, x])),
            None => base,
        },
        Err(e) => {
            log::warn!("cannot open the tracking sink in {}: {e}; continuing without it", ctx.run_dir.display());
            extra.unwrap_or_else(|| Box::new(NullSink))
        }
    };
    train_run(config, &corpus, &ctx, sink, control)
}

/// Metrics for a labeled split, or a prediction file when `prediction_path`
/// is given or the split carries no labels.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    split: Split,
    corpus_dir: Option<&Path>,
    prediction_path: Option<&Path>,
) -> Result<TestOutcome, RunnerError> {
    let set = load_for_evaluation(checkpoint, corpus_dir)?;
    let impressions = set.corpus.split(split);
    if impressions.is_empty() {
        return Err(RunnerError::EmptySplit(split));
    }
    let labeled = impressions.iter().all(|i| i.is_labeled());
    match prediction_path {
        None if labeled => Ok(TestOutcome::Metrics(validate(&set.model, &set.inputs, impressions, split)?)),
        _ => {
            let path = prediction_path
                .map(Path::to_path_buf)
                .unwrap_or_else(|| default_prediction_path(checkpoint, split));
            let n = predict(&set.model, &set.inputs, impressions, &path)?;
            Ok(TestOutcome::Predictions { path, impressions: n })
        }
    }
}

/// `<checkpoint dir>/predictions_<split>.tsv`.
pub fn default_prediction_path(checkpoint: &Path, split: Split) -> PathBuf {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    dir.join(format!("predictions_{}.tsv", split.as_str()))
}
