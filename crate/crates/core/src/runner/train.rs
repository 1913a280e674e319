use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::evaluate::validate;
use super::optimizer::MomentumSgd;
use super::summary::{prepare_run, RunContext, RunSummary};
use super::tracking::{Tracker, TrackingSink};
use super::{epoch_seed, EpochRecord, Phase, RunState, RunnerError};
use crate::configuration::ExperimentConfig;
use crate::corpus::{sample_training_pairs, Split, TrainingSample, UnifiedCorpus};
use crate::metrics::EvalResult;
use crate::models::{BatchGradients, Mode, ModelError, ModelInputs, NewsRecModel, Parameterized};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOSS_EVERY: u64 = 50;

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch}.ckpt")
}

/// Knobs for interrupting and resuming a run.
#[derive(Debug, Clone, Default)]
pub struct TrainControl {
    /// Epoch checkpoint to continue from.
    pub resume_from: Option<PathBuf>,
    /// Stop cleanly after this epoch's checkpoint is written.
    pub stop_after_epoch: Option<usize>,
    /// Stop after this many optimizer steps in total (no checkpoint).
    pub max_steps: Option<u64>,
    /// Resume even when the checkpoint's config fingerprint differs.
    pub allow_fingerprint_mismatch: bool,
}

pub struct TrainOutcome {
    pub state: RunState,
    pub model: NewsRecModel,
    pub run_dir: PathBuf,
    pub final_dev: Option<EvalResult>,
    pub tracking_failures: u64,
}

pub type StepGradients = BatchGradients;

/// Loss and gradient sums for one batch, sharded contiguously over
/// `replicas` threads and reduced in shard order.
pub fn compute_gradients(
    model: &NewsRecModel,
    inputs: &ModelInputs,
    batch: &[TrainingSample],
    replicas: usize,
    mode: Mode,
) -> Result<BatchGradients, ModelError> {
    if replicas <= 1 || batch.len() < 2 {
        return model.batch_gradients(inputs, batch, mode);
    }
    let n = replicas.min(batch.len());
    let (base, extra) = (batch.len() / n, batch.len() % n);
    let mut shards = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        shards.push(&batch[start..start + len]);
        start += len;
    }
    let results: Vec<Result<BatchGradients, ModelError>> = std::thread::scope(|s| {
        let handles: Vec<_> =
            shards.iter().map(|shard| s.spawn(move || model.batch_gradients(inputs, shard, mode))).collect();
        handles.into_iter().map(|h| h.join().expect("replica thread panicked")).collect()
    });
    let mut iter = results.into_iter();
    let mut total = iter.next().expect("at least one shard")?;
    for r in iter {
        let r = r?;
        total.loss_sum += r.loss_sum;
        total.samples += r.samples;
        total.grads.accumulate(&r.grads);
    }
    Ok(total)
}

/// Trains in a fresh run directory under `config.output_dir`.
pub fn train(
    config: &ExperimentConfig,
    corpus: &UnifiedCorpus,
    sink: Box<dyn TrackingSink>,
) -> Result<TrainOutcome, RunnerError> {
    let ctx = prepare_run(config)?;
    train_run(config, corpus, &ctx, sink, &TrainControl::default())
}

fn shuffled_samples(config: &ExperimentConfig, corpus: &UnifiedCorpus, epoch: usize) -> Vec<TrainingSample> {
    let seed = epoch_seed(config.seed, epoch);
    let (mut samples, _) = sample_training_pairs(corpus.split(Split::Train), config.negatives, config.history_len, seed);
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.rotate_left(17)));
    samples
}

struct Session<'a> {
    config: &'a ExperimentConfig,
    run_dir: &'a Path,
    tracker: Tracker,
    state: RunState,
}

impl Session<'_> {
    fn write_summary(&self) {
        if let Err(e) = RunSummary::new(self.config, &self.state, self.run_dir).write(self.run_dir) {
            log::warn!("could not write run summary: {e}");
        }
    }

    fn fail(&mut self, message: String) {
        log::error!("run {} failed: {message}", self.state.run_id);
        self.state.phase = Phase::Failed;
        self.state.failure = Some(message.clone());
        self.tracker.status("phase", self.state.step, serde_json::json!({"phase": "failed", "reason": message}));
        self.tracker.flush();
        self.write_summary();
    }
}

/// Runs (or resumes) training in `ctx.run_dir`.
///
/// A non-finite loss ends the run with phase `failed`; the checkpoints
/// already written stay in place.
pub fn train_run(
    config: &ExperimentConfig,
    corpus: &UnifiedCorpus,
    ctx: &RunContext,
    sink: Box<dyn TrackingSink>,
    control: &TrainControl,
) -> Result<TrainOutcome, RunnerError> {
    if corpus.split(Split::Train).is_empty() {
        return Err(RunnerError::EmptySplit(Split::Train));
    }
    let inputs = ModelInputs::build(config, corpus)?;
    let (mut model, mut optimizer, state) = match &control.resume_from {
        None => {
            let model = NewsRecModel::from_config(config, &inputs)?;
            let opt = MomentumSgd::new(config.learning_rate, config.momentum, &model.weights);
            (model, opt, RunState::new(&ctx.run_id, config.seed))
        }
        Some(path) => {
            let ckpt: Checkpoint = load_checkpoint(path)?;
            ckpt.check_fingerprint(config, control.allow_fingerprint_mismatch)?;
            let model = ckpt.model()?;
            let mut opt = MomentumSgd::new(config.learning_rate, config.momentum, &model.weights);
            opt.velocity = ckpt.velocity_like(&model.weights)?;
            (model, opt, ckpt.state)
        }
    };
    let resumed = control.resume_from.is_some();
    let mut s = Session {
        config,
        run_dir: &ctx.run_dir,
        tracker: Tracker::new(state.run_id.clone(), sink, state.next_event_seq),
        state,
    };
    if let Some(cov) = &inputs.coverage {
        log::info!("precomputed embeddings cover {:.1}% of news ({} missing)", cov.coverage * 100.0, cov.missing.len());
    }

    s.state.phase = Phase::Training;
    s.state.failure = None;
    s.tracker.status("phase", s.state.step, serde_json::json!({"phase": "training", "resumed": resumed}));
    let replicas = config.device_plan.replicas();
    let dev = corpus.split(Split::Dev);
    let dev_usable = !dev.is_empty() && dev.iter().all(|i| i.is_labeled());

    let mut final_dev = s.state.last_dev().cloned();
    for epoch in s.state.epoch + 1..=config.epochs {
        let samples = shuffled_samples(config, corpus, epoch);
        let (mut epoch_loss, mut epoch_n) = (0.0, 0usize);
        let (mut window_loss, mut window_n) = (0.0, 0u64);
        for batch in samples.chunks(config.batch_size) {
            if control.max_steps.is_some_and(|m| s.state.step >= m) {
                s.tracker.flush();
                s.write_summary();
                return Ok(TrainOutcome {
                    tracking_failures: s.tracker.failures(),
                    state: s.state,
                    model,
                    run_dir: ctx.run_dir.clone(),
                    final_dev,
                });
            }
            let mode = Mode::Train { seed: config.seed, step: s.state.step + 1 };
            let mut g = match compute_gradients(&model, &inputs, batch, replicas, mode) {
                Ok(g) if g.loss_sum.is_finite() => g,
                Ok(_) | Err(ModelError::NonFinite(_)) => {
                    s.fail(format!("non-finite loss at step {}", s.state.step + 1));
                    return Ok(TrainOutcome {
                        tracking_failures: s.tracker.failures(),
                        state: s.state,
                        model,
                        run_dir: ctx.run_dir.clone(),
                        final_dev,
                    });
                }
                Err(e) => return Err(e.into()),
            };
            g.grads.scale_all(1.0 / batch.len() as f64);
            optimizer.step(&mut model.weights, &g.grads);
            s.state.step += 1;
            epoch_loss += g.loss_sum;
            epoch_n += batch.len();
            window_loss += g.loss_sum / batch.len() as f64;
            window_n += 1;
            if s.state.step.is_multiple_of(LOSS_EVERY) {
                s.tracker.scalar("train/loss", s.state.step, window_loss / window_n as f64);
                (window_loss, window_n) = (0.0, 0);
            }
        }
        let step = s.state.step;
        let train_loss = epoch_loss / epoch_n.max(1) as f64;
        s.tracker.scalar("train/epoch_loss", step, train_loss);

        let mut dev_result = None;
        if dev_usable {
            s.state.phase = Phase::Validating;
            s.tracker.status("phase", step, serde_json::json!({"phase": "validating", "epoch": epoch}));
            let r = validate(&model, &inputs, dev, Split::Dev)?;
            for (name, v) in r.metrics() {
                s.tracker.scalar(&format!("dev/{name}"), step, v);
            }
            s.state.phase = Phase::Training;
            dev_result = Some(r);
        }
        s.state.epoch = epoch;
        s.state.history.push(EpochRecord { epoch, step, train_loss, dev: dev_result.clone() });
        let improved = match (&dev_result, s.state.best_dev_metric) {
            (Some(r), None) => Some(r.auc),
            (Some(r), Some(best)) if r.auc > best => Some(r.auc),
            _ => None,
        };
        if let Some(auc) = improved {
            s.state.best_dev_metric = Some(auc);
            s.state.best_epoch = Some(epoch);
        }
        final_dev = dev_result.or(final_dev);

        let path = ctx.run_dir.join(epoch_checkpoint_name(epoch));
        s.tracker.scalar("progress", step, epoch as f64 / config.epochs as f64);
        s.tracker.artifact("checkpoint", step, &path);
        if improved.is_some() {
            s.tracker.artifact("best_checkpoint", step, &ctx.run_dir.join(BEST_CHECKPOINT));
        }
        s.state.checkpoint_paths.push(path.clone());
        if epoch == config.epochs {
            s.state.phase = Phase::Finished;
            s.tracker.status("phase", step, serde_json::json!({"phase": "finished"}));
        }
        s.state.next_event_seq = s.tracker.next_seq();
        let ckpt = Checkpoint::new(config, &model, &optimizer.velocity, &s.state);
        save_checkpoint(&ckpt, &path)?;
        if improved.is_some() {
            let best = ctx.run_dir.join(BEST_CHECKPOINT);
            fs::copy(&path, &best).map_err(|e| RunnerError::io(best, e))?;
        }
        s.tracker.flush();
        s.write_summary();
        if control.stop_after_epoch == Some(epoch) {
            break;
        }
    }
    if s.state.epoch >= config.epochs {
        s.state.phase = Phase::Finished;
    }
    s.tracker.flush();
    s.write_summary();
    Ok(TrainOutcome { tracking_failures: s.tracker.failures(), state: s.state, model, run_dir: ctx.run_dir.clone(), final_dev })
}
