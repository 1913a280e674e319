use std::io;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};

use newsrec::configuration::resolve_config;
use newsrec::corpus::download::dataset_source;
use newsrec::corpus::store::META_FILE;
use newsrec::corpus::synth::{category_embeddings, planted_corpus, PlantedConfig};
use newsrec::corpus::{adapter_for, download_dataset, preprocess, save_corpus, PreprocessOptions, Split};
use newsrec::models::EmbeddingTable;
use newsrec::runner::{
    evaluate_checkpoint, list_runs, run_training, Phase, TestOutcome, TrackingEvent, TrackingSink, TrainControl,
};
use newsrec::EvalResult;
use newsrec_server::ServerConfig;
use serde_json::json;

use crate::outcome::{CommandOutcome, Failure};
use crate::{Cli, Command, Global};

pub fn name(c: &Command) -> &'static str {
    match c {
        Command::Download { .. } => "download",
        Command::Preprocess { .. } => "preprocess",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Predict { .. } => "predict",
        Command::Serve { .. } => "serve",
        Command::Synth { .. } => "synth",
        Command::Runs { .. } => "runs",
    }
}

pub fn run(cli: &Cli) -> Result<CommandOutcome, Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Download { dataset, dir, mirror } => download(dataset, dir.as_deref(), mirror.as_deref()),
        Command::Preprocess { dataset, raw, out } => cmd_preprocess(g, dataset, raw.as_deref(), out.as_deref()),
        Command::Train { model, corpus, resume, allow_fingerprint_mismatch, stop_after_epoch } => {
            let control = TrainControl {
                resume_from: resume.clone(),
                stop_after_epoch: *stop_after_epoch,
                allow_fingerprint_mismatch: *allow_fingerprint_mismatch,
                max_steps: None,
            };
            train(g, model, corpus.as_deref(), control)
        }
        Command::Evaluate { checkpoint, split } => evaluate(g, checkpoint, split, None),
        Command::Predict { checkpoint, split, out } => evaluate(g, checkpoint, split, Some(out)),
        Command::Serve { host, port, data_dir, runs_dir, max_trainers, static_dir } => {
            let config = ServerConfig {
                config_root: g.config_root.clone(),
                data_dir: data_dir.clone(),
                runs_dir: runs_dir.clone(),
                max_trainers: *max_trainers,
                static_dir: static_dir.clone(),
                ..Default::default()
            };
            serve(config, host, *port)
        }
        Command::Synth { out, small } => synth(g, out, *small),
        Command::Runs { dir } => runs(dir),
    }
}

fn split_overrides(items: &[String]) -> Result<Vec<(String, String)>, Failure> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Failure::User(format!("override `{s}` must look like key=value")))
        })
        .collect()
}

fn metric_line(r: &EvalResult) -> String {
    format!("auc={:.4} mrr={:.4} ndcg5={:.4} ndcg10={:.4}", r.auc, r.mrr, r.ndcg5, r.ndcg10)
}

fn download(dataset: &str, dir: Option<&Path>, mirror: Option<&str>) -> Result<CommandOutcome, Failure> {
    dataset_source(dataset)?;
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| Path::new("data").join(dataset).join("raw"));
    let m = download_dataset(dataset, &dir, mirror)?;
    let summary = format!(
        "{dataset}: {} files in {} ({} bytes downloaded)",
        m.files.len(),
        dir.display(),
        m.bytes_downloaded
    );
    Ok(CommandOutcome::ok(summary, serde_json::to_value(&m).unwrap_or_default(), Some(dir)))
}

fn cmd_preprocess(g: &Global, dataset: &str, raw: Option<&Path>, out: Option<&Path>) -> Result<CommandOutcome, Failure> {
    adapter_for(dataset)?;
    let mut options = PreprocessOptions::default();
    for (key, value) in split_overrides(&g.overrides)? {
        let parsed: usize =
            value.parse().map_err(|_| Failure::User(format!("`{key}` must be a non-negative integer, got `{value}`")))?;
        match key.as_str() {
            "min_freq" => options.min_freq = parsed,
            "max_vocab_size" => options.max_vocab_size = parsed,
            other => return Err(Failure::User(format!("preprocess has no setting `{other}` (min_freq, max_vocab_size)"))),
        }
    }
    let base = Path::new("data").join(dataset);
    let raw = raw.map(Path::to_path_buf).unwrap_or_else(|| base.join("raw"));
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| base.join("corpus"));
    if !raw.is_dir() {
        return Err(Failure::User(format!("raw directory {} does not exist", raw.display())));
    }
    let (corpus, report) = preprocess(dataset, &raw, &out, &options)?;
    let impressions: usize = corpus.splits.values().map(Vec::len).sum();
    let mut summary = format!(
        "{dataset}: {} news, {impressions} impressions written to {}",
        corpus.news.len(),
        out.display()
    );
    if report.total() > 0 {
        summary.push_str(&format!("; {} rows skipped:", report.total()));
        for (reason, n) in &report.counts {
            summary.push_str(&format!("\n  {n:>6}  {reason}"));
        }
    }
    let result = json!({
        "corpus_dir": out,
        "news": corpus.news.len(),
        "impressions": impressions,
        "skipped": report.counts,
    });
    Ok(CommandOutcome::ok(summary, result, Some(out)))
}

/// Echoes epoch results to stderr while a run trains.
struct ConsoleSink;

impl TrackingSink for ConsoleSink {
    fn emit(&mut self, e: &TrackingEvent) -> io::Result<()> {
        match e.name.as_str() {
            "train/epoch_loss" => eprintln!("step {:>6}  train loss {:.4}", e.step, e.value.as_f64().unwrap_or(f64::NAN)),
            "dev/auc" => eprintln!("step {:>6}  dev auc    {:.4}", e.step, e.value.as_f64().unwrap_or(f64::NAN)),
            _ => {}
        }
        Ok(())
    }
}

fn train(g: &Global, model: &str, corpus: Option<&Path>, control: TrainControl) -> Result<CommandOutcome, Failure> {
    let mut overrides = Vec::new();
    if let Some(c) = corpus {
        overrides.push(format!("corpus_dir={}", c.display()));
    }
    if let Some(seed) = g.seed {
        overrides.push(format!("seed={seed}"));
    }
    overrides.extend(g.overrides.iter().cloned());
    let (config, warnings) = resolve_config(model, &g.config_root, &overrides)?;
    for w in warnings {
        log::warn!("{w}");
    }
    if let Some(ckpt) = &control.resume_from {
        if !ckpt.is_file() {
            return Err(Failure::User(format!("checkpoint {} does not exist", ckpt.display())));
        }
    }
    if !config.corpus_dir.join(META_FILE).is_file() {
        return Err(Failure::User(format!(
            "no corpus in {}; run `newsrec preprocess` (or `newsrec synth`) first, or pass --corpus",
            config.corpus_dir.display()
        )));
    }
    let extra: Option<Box<dyn TrackingSink>> = if g.json { None } else { Some(Box::new(ConsoleSink)) };
    let out = run_training(&config, &control, extra)?;
    if out.state.phase == Phase::Failed {
        return Err(Failure::Pipeline(format!(
            "run {} failed: {}; checkpoints up to epoch {} are in {}",
            out.state.run_id,
            out.state.failure.as_deref().unwrap_or("unknown cause"),
            out.state.epoch,
            out.run_dir.display()
        )));
    }
    let epochs = if out.state.epoch == 1 { "epoch" } else { "epochs" };
    let mut summary = format!("run {} {} after {} {epochs}", out.state.run_id, out.state.phase.as_str(), out.state.epoch);
    if let Some(dev) = &out.final_dev {
        summary.push_str(&format!("\ndev {}", metric_line(dev)));
    }
    summary.push_str(&format!("\nrun directory {}", out.run_dir.display()));
    let result = json!({
        "run_id": out.state.run_id,
        "run_dir": out.run_dir,
        "phase": out.state.phase,
        "epochs_completed": out.state.epoch,
        "step": out.state.step,
        "final_dev": out.final_dev,
        "best_dev_auc": out.state.best_dev_metric,
        "best_epoch": out.state.best_epoch,
    });
    Ok(CommandOutcome::ok(summary, result, Some(out.run_dir)))
}

fn evaluate(g: &Global, checkpoint: &Path, split: &str, out: Option<&Path>) -> Result<CommandOutcome, Failure> {
    let split: Split = split.parse().map_err(Failure::User)?;
    let mut corpus_dir: Option<PathBuf> = None;
    for (key, value) in split_overrides(&g.overrides)? {
        match key.as_str() {
            "corpus_dir" => corpus_dir = Some(PathBuf::from(value)),
            other => {
                return Err(Failure::User(format!(
                    "`{other}` cannot be changed here: the checkpoint fixes the configuration (only corpus_dir may be set)"
                )))
            }
        }
    }
    if !checkpoint.is_file() {
        return Err(Failure::User(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    match evaluate_checkpoint(checkpoint, split, corpus_dir.as_deref(), out)? {
        TestOutcome::Metrics(r) => {
            let summary = format!("{split} {}", metric_line(&r));
            Ok(CommandOutcome::ok(summary, serde_json::to_value(&r).unwrap_or_default(), None))
        }
        TestOutcome::Predictions { path, impressions } => {
            let summary = format!("{split}: {impressions} impressions scored into {}", path.display());
            Ok(CommandOutcome::ok(summary, json!({"path": path, "impressions": impressions}), Some(path)))
        }
    }
}

fn serve(config: ServerConfig, host: &str, port: u16) -> Result<CommandOutcome, Failure> {
    let addr: SocketAddr = (host, port)
        .to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| Failure::User(format!("cannot resolve host `{host}`")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Pipeline(e.to_string()))?;
    runtime.block_on(async {
        let (local, server) = newsrec_server::bind(config, addr)
            .await
            .map_err(|e| Failure::User(format!("cannot listen on {addr}: {e}")))?;
        println!("listening on http://{local}");
        server.await.map_err(|e| Failure::Pipeline(e.to_string()))?;
        Ok(CommandOutcome::ok("server stopped", json!({}), None))
    })
}

fn synth(g: &Global, out: &Path, small: bool) -> Result<CommandOutcome, Failure> {
    let seed = g.seed.unwrap_or(42);
    let cfg = if small { PlantedConfig::small(seed) } else { PlantedConfig { seed, ..PlantedConfig::default() } };
    let data = planted_corpus(&cfg);
    let corpus_dir = out.join("corpus");
    save_corpus(&data.corpus, &corpus_dir)?;
    let mut table = EmbeddingTable::new(cfg.categories, "noisy category one-hot");
    for (id, v) in category_embeddings(&data, 0.1, seed) {
        table.insert(id, v).map_err(|e| Failure::Pipeline(e.to_string()))?;
    }
    let embeddings = out.join("news_embeddings.tsv");
    table.save(&embeddings).map_err(|e| Failure::Pipeline(e.to_string()))?;
    let impressions: usize = data.corpus.splits.values().map(Vec::len).sum();
    let summary = format!(
        "planted corpus with {} news and {impressions} impressions in {}; embeddings in {}",
        data.corpus.news.len(),
        corpus_dir.display(),
        embeddings.display()
    );
    let result = json!({"corpus_dir": corpus_dir, "embedding_file": embeddings, "news": data.corpus.news.len()});
    Ok(CommandOutcome::ok(summary, result, Some(corpus_dir)))
}

fn runs(dir: &Path) -> Result<CommandOutcome, Failure> {
    let runs = list_runs(dir);
    let mut lines = vec![format!("{:<32} {:<10} {:<12} {:<9} {:>6} {:>6} {:>6} {:>6}", "run", "model", "dataset", "phase", "auc", "mrr", "ndcg5", "ndcg10")];
    for r in &runs {
        let m = |f: fn(&EvalResult) -> f64| r.final_dev.as_ref().map_or("-".to_string(), |d| format!("{:.4}", f(d)));
        lines.push(format!(
            "{:<32} {:<10} {:<12} {:<9} {:>6} {:>6} {:>6} {:>6}",
            r.run_id,
            r.model_name,
            r.dataset_name,
            r.phase.as_str(),
            m(|d| d.auc),
            m(|d| d.mrr),
            m(|d| d.ndcg5),
            m(|d| d.ndcg10)
        ));
    }
    if runs.is_empty() {
        lines = vec![format!("no runs in {}", dir.display())];
    }
    Ok(CommandOutcome::ok(lines.join("\n"), serde_json::to_value(&runs).unwrap_or_default(), None))
}
