use std::path::{Path, PathBuf};

use super::checkpoint::{load_checkpoint, Checkpoint};
use super::RunnerError;
use crate::configuration::ExperimentConfig;
use crate::corpus::{load_corpus, ImpressionLog, Split, UnifiedCorpus};
use crate::metrics::prediction::write_predictions;
use crate::metrics::{evaluate_impressions, EvalResult};
use crate::models::{ModelInputs, ModelSpec, NewsRecModel};

#[derive(Debug, Clone, PartialEq)]
pub enum TestOutcome {
    Metrics(EvalResult),
    Predictions { path: PathBuf, impressions: usize },
}

/// Scores a labeled split in evaluation mode.
pub fn validate(
    model: &NewsRecModel,
    inputs: &ModelInputs,
    impressions: &[ImpressionLog],
    split: Split,
) -> Result<EvalResult, RunnerError> {
    if impressions.is_empty() {
        return Err(RunnerError::EmptySplit(split));
    }
    let labels = impressions
        .iter()
        .map(|imp| imp.labels().ok_or(RunnerError::Unlabeled(split)))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = model.score_impressions(inputs, impressions)?;
    let pairs: Vec<(Vec<u8>, Vec<f64>)> = labels.into_iter().zip(scores).collect();
    Ok(evaluate_impressions(&pairs)?)
}

/// Metrics for a labeled split; a prediction file at `prediction_path` for
/// an unlabeled one.
pub fn test(
    model: &NewsRecModel,
    inputs: &ModelInputs,
    impressions: &[ImpressionLog],
    split: Split,
    prediction_path: &Path,
) -> Result<TestOutcome, RunnerError> {
    if impressions.is_empty() {
        return Err(RunnerError::EmptySplit(split));
    }
    if impressions.iter().all(ImpressionLog::is_labeled) {
        return Ok(TestOutcome::Metrics(validate(model, inputs, impressions, split)?));
    }
    let n = predict(model, inputs, impressions, prediction_path)?;
    Ok(TestOutcome::Predictions { path: prediction_path.to_path_buf(), impressions: n })
}

/// Writes one prediction line per impression.
pub fn predict(
    model: &NewsRecModel,
    inputs: &ModelInputs,
    impressions: &[ImpressionLog],
    path: &Path,
) -> Result<usize, RunnerError> {
    let scores = model.score_impressions(inputs, impressions)?;
    Ok(write_predictions(path, impressions.iter().map(|i| i.impression_id.as_str()).zip(scores))?)
}

/// A checkpointed model together with the corpus it is evaluated on.
pub struct EvaluationSet {
    pub checkpoint: Checkpoint,
    pub config: ExperimentConfig,
    pub corpus: UnifiedCorpus,
    pub inputs: ModelInputs,
    pub model: NewsRecModel,
}

/// Loads a checkpoint and the corpus named by its config (or `corpus_dir`).
pub fn load_for_evaluation(checkpoint_path: &Path, corpus_dir: Option<&Path>) -> Result<EvaluationSet, RunnerError> {
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let config = checkpoint.config.clone();
    let corpus = load_corpus(corpus_dir.unwrap_or(&config.corpus_dir))?;
    let inputs = ModelInputs::build(&config, &corpus)?;
    let expected = ModelSpec::from_config(&config, &inputs).parameter_shapes();
    if expected != checkpoint.spec.parameter_shapes() {
        return Err(RunnerError::Checkpoint {
            path: checkpoint_path.to_path_buf(),
            message: "the corpus does not match the one the model was trained on (vocabulary, users or embedding width differ)".into(),
        });
    }
    let model = checkpoint.model()?;
    Ok(EvaluationSet { checkpoint, config, corpus, inputs, model })
}
