//! End-to-end acceptance checks. Runs as a plain binary (no libtest harness)
//! and prints one PASS/FAIL line per criterion; exits non-zero if any fail.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use newsrec::configuration::{resolve_config, ConfigError, ConfigValue, DevicePlan, ExperimentConfig};
use newsrec::corpus::{load_corpus, save_corpus, to_unified_corpus, MindAdapter, PreprocessOptions, Split, UnifiedCorpus};
use newsrec::metrics::{auc, evaluate_impressions, mrr, ndcg_at_k};
use newsrec::models::DenseMatrix;
use newsrec::runner::train::epoch_checkpoint_name;
use newsrec::runner::{load_checkpoint, prepare_run, train, train_run, NullSink, TrainControl, TrainOutcome};

use common::{gradcheck, oracle};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_secs as f64, || {
        format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn run(config: &ExperimentConfig, corpus: &UnifiedCorpus) -> Result<TrainOutcome, String> {
    train(config, corpus, Box::new(NullSink)).map_err(|e| e.to_string())
}

fn dev_auc(outcome: &TrainOutcome) -> Result<f64, String> {
    outcome.final_dev.as_ref().map(|r| r.auc).ok_or_else(|| "no dev metrics recorded".to_string())
}

fn metric_oracle() -> Result<String, String> {
    let start = Instant::now();
    let impressions = common::random_impressions(1000, 50, 2024);
    let ties = impressions.iter().filter(|(_, s)| (1..s.len()).any(|i| s[..i].contains(&s[i]))).count();
    let mut worst: f64 = 0.0;
    for (labels, scores) in &impressions {
        let pairs = [
            (auc(labels, scores).ok(), oracle::auc(labels, scores)),
            (mrr(labels, scores).ok(), oracle::mrr(labels, scores)),
            (ndcg_at_k(labels, scores, 5).ok(), oracle::ndcg(labels, scores, 5)),
            (ndcg_at_k(labels, scores, 10).ok(), oracle::ndcg(labels, scores, 10)),
        ];
        for (ours, reference) in pairs {
            match (ours, reference) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (a, b) => return Err(format!("definedness differs: {a:?} vs {b:?} on {labels:?}")),
            }
        }
    }
    let result = evaluate_impressions(&impressions).map_err(|e| e.to_string())?;
    let reference = oracle::evaluate(&impressions);
    for ((name, ours), theirs) in result.metrics().iter().zip(reference) {
        worst = worst.max((ours - theirs).abs());
        ensure((ours - theirs).abs() <= 1e-9, || format!("mean {name}: {ours} vs {theirs}"))?;
    }
    ensure(worst <= 1e-9, || format!("max difference {worst:e}"))?;
    within(start.elapsed(), 10)?;
    Ok(format!("1000 impressions ({ties} with tied scores), max difference {worst:.1e}"))
}

fn gradient_checks() -> Result<String, String> {
    let start = Instant::now();
    let components: [(&str, fn(u64) -> f64); 5] = [
        ("embedding", gradcheck::embedding),
        ("self-attention", gradcheck::attention),
        ("additive pooling", gradcheck::pooling),
        ("neighbour aggregation", gradcheck::aggregation),
        ("training loss", gradcheck::loss),
    ];
    let mut parts = Vec::new();
    for (name, check) in components {
        let worst = (0..25).map(check).fold(0.0, f64::max);
        ensure(worst < 1e-4, || format!("{name}: relative error {worst:e}"))?;
        parts.push(format!("{name} {worst:.0e}"));
    }
    for (model, hops) in [("nrms_like", 1), ("gnn_like", 1), ("gnn_like", 2), ("llm_like", 1)] {
        let worst = gradcheck::full_model(model, hops, 11);
        ensure(worst < 1e-4, || format!("{model} (hops {hops}): relative error {worst:e}"))?;
    }
    parts.push("full models ok".into());
    within(start.elapsed(), 60)?;
    Ok(format!("25 seeds each; worst: {}", parts.join(", ")))
}

fn planted_signal() -> Result<String, String> {
    let start = Instant::now();
    let data = common::planted();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut report = Vec::new();
    for (model, threshold) in [("nrms_like", 0.75), ("gnn_like", 0.70), ("llm_like", 0.70)] {
        let mut config = common::planted_config(model, dir.path());
        if model == "llm_like" {
            config.learning_rate = 0.05;
            common::attach_category_embeddings(&mut config, &data, dir.path());
        }
        let outcome = run(&config, &data.corpus)?;
        ensure(outcome.state.epoch == 5, || format!("{model} stopped after {} epochs", outcome.state.epoch))?;
        let value = dev_auc(&outcome)?;
        ensure(value >= threshold, || format!("{model}: dev AUC {value:.4} < {threshold}"))?;
        report.push(format!("{model} {value:.3}"));
    }
    within(start.elapsed(), 300)?;
    Ok(format!("dev AUC after 5 epochs: {}", report.join(", ")))
}

fn params_bitwise_equal(a: &BTreeMap<String, DenseMatrix>, b: &BTreeMap<String, DenseMatrix>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((na, ma), (nb, mb))| {
            na == nb
                && ma.shape() == mb.shape()
                && ma.data().iter().zip(mb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

fn reproducibility() -> Result<String, String> {
    let data = common::small_planted(5);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = Vec::new();
    for model in ["nrms_like", "gnn_like", "llm_like"] {
        let mut config = common::tiny_config(model, dir.path());
        config.dropout = 0.1;
        if model == "llm_like" {
            common::attach_category_embeddings(&mut config, &data, dir.path());
        }
        let a = run(&config, &data.corpus)?;
        let b = run(&config, &data.corpus)?;
        ensure(a.run_dir != b.run_dir, || "both runs wrote to one directory".into())?;
        let (ra, rb) = (a.final_dev.clone().ok_or("no dev metrics")?, b.final_dev.clone().ok_or("no dev metrics")?);
        for ((name, x), (_, y)) in ra.metrics().iter().zip(rb.metrics()) {
            ensure((x - y).abs() <= 1e-6, || format!("{model} {name}: {x} vs {y}"))?;
        }
        let last = epoch_checkpoint_name(config.epochs);
        let ca = load_checkpoint(&a.run_dir.join(&last)).map_err(|e| e.to_string())?;
        let cb = load_checkpoint(&b.run_dir.join(&last)).map_err(|e| e.to_string())?;
        ensure(params_bitwise_equal(&ca.params, &cb.params), || format!("{model}: checkpoint parameters differ"))?;
        ensure(params_bitwise_equal(&ca.params, &a.model.weights.named()), || {
            format!("{model}: checkpoint does not hold the final parameters")
        })?;
        checked.push(model);
    }
    Ok(format!("{}: identical metrics and bit-identical checkpoints", checked.join(", ")))
}

fn max_relative_difference(a: &BTreeMap<String, DenseMatrix>, b: &BTreeMap<String, DenseMatrix>) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, ma) in a {
        let mb = &b[name];
        for (x, y) in ma.data().iter().zip(mb.data()) {
            let scale = x.abs().max(y.abs());
            if scale > 0.0 {
                worst = worst.max((x - y).abs() / scale);
            }
        }
    }
    worst
}

fn data_parallel() -> Result<String, String> {
    let data = common::planted();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for model in ["nrms_like", "gnn_like"] {
        let mut single = common::tiny_config(model, dir.path());
        single.batch_size = 16;
        single.epochs = 1;
        single.dropout = 0.1;
        let mut parallel = single.clone();
        parallel.device_plan = DevicePlan::data_parallel(2);
        let control = TrainControl { max_steps: Some(20), ..TrainControl::default() };
        let mut finals = Vec::new();
        for config in [&single, &parallel] {
            let ctx = prepare_run(config).map_err(|e| e.to_string())?;
            let outcome = train_run(config, &data.corpus, &ctx, Box::new(NullSink), &control).map_err(|e| e.to_string())?;
            ensure(outcome.state.step == 20, || format!("{model}: ran {} steps", outcome.state.step))?;
            finals.push(outcome.model.weights.named());
        }
        let diff = max_relative_difference(&finals[0], &finals[1]);
        ensure(diff < 1e-5, || format!("{model}: max relative difference {diff:e}"))?;
        parts.push(format!("{model} {diff:.1e}"));
    }
    Ok(format!("2 replicas vs single device after 20 steps, max relative difference: {}", parts.join(", ")))
}

fn corpus_pipeline() -> Result<String, String> {
    let options = PreprocessOptions::default();
    let (corpus, report) = to_unified_corpus("mind-fixture", &common::fixture("mind"), &MindAdapter, &options)
        .map_err(|e| e.to_string())?;
    ensure(report.total() == 0, || format!("clean fixture rejected rows: {:?}", report.counts))?;
    let impressions: usize = Split::ALL.iter().map(|&s| corpus.split(s).len()).sum();
    ensure(corpus.news.len() == 20 && impressions == 10, || {
        format!("{} news / {impressions} impressions", corpus.news.len())
    })?;
    let n17 = &corpus.news["N17"];
    ensure(n17.title_tokens[..4] == ["u", "s", "china", "trade"], || format!("N17 title {:?}", n17.title_tokens))?;
    ensure(n17.entities.as_deref() == Some(&["Q71".to_string()][..]), || format!("N17 entities {:?}", n17.entities))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    save_corpus(&corpus, dir.path()).map_err(|e| e.to_string())?;
    let loaded = load_corpus(dir.path()).map_err(|e| e.to_string())?;
    ensure(loaded == corpus, || "loaded corpus differs from the saved one".into())?;

    let expected: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(common::fixture("mind_malformed/expected_report.json")).unwrap())
            .unwrap();
    let (bad, report) = to_unified_corpus("mind-malformed", &common::fixture("mind_malformed"), &MindAdapter, &options)
        .map_err(|e| e.to_string())?;
    let counts: BTreeMap<String, usize> = serde_json::from_value(expected["counts"].clone()).unwrap();
    ensure(report.counts == counts, || format!("skip counts {:?}, expected {counts:?}", report.counts))?;
    ensure(report.total() as u64 == expected["total"].as_u64().unwrap(), || format!("total {}", report.total()))?;
    for (key, split) in [("train", Split::Train), ("dev", Split::Dev), ("test", Split::Test)] {
        let want = expected[key].as_u64().unwrap() as usize;
        ensure(bad.split(split).len() == want, || format!("{key}: {} impressions", bad.split(split).len()))?;
    }
    ensure(bad.news.len() == 20, || format!("malformed fixture kept {} news", bad.news.len()))?;
    Ok(format!("20 news / 10 impressions round-trip; {} malformed rows counted by reason", report.total()))
}

fn resume_equivalence() -> Result<String, String> {
    let data = common::small_planted(9);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = common::tiny_config("nrms_like", dir.path());
    config.epochs = 4;
    config.dropout = 0.1;
    let full = run(&config, &data.corpus)?;

    let ctx = prepare_run(&config).map_err(|e| e.to_string())?;
    let stop = TrainControl { stop_after_epoch: Some(2), ..TrainControl::default() };
    let first = train_run(&config, &data.corpus, &ctx, Box::new(NullSink), &stop).map_err(|e| e.to_string())?;
    ensure(first.state.epoch == 2, || format!("interrupted run stopped at epoch {}", first.state.epoch))?;
    let resume = TrainControl { resume_from: Some(ctx.run_dir.join(epoch_checkpoint_name(2))), ..TrainControl::default() };
    let resumed = train_run(&config, &data.corpus, &ctx, Box::new(NullSink), &resume).map_err(|e| e.to_string())?;

    let (a, b) = (full.final_dev.ok_or("no dev metrics")?, resumed.final_dev.ok_or("no dev metrics")?);
    for ((name, x), (_, y)) in a.metrics().iter().zip(b.metrics()) {
        ensure((x - y).abs() <= 1e-6, || format!("{name}: {x} vs {y}"))?;
    }
    ensure(full.state.step == resumed.state.step, || "step counts differ".into())?;
    ensure(params_bitwise_equal(&full.model.weights.named(), &resumed.model.weights.named()), || {
        "final parameters differ".into()
    })?;
    Ok(format!("stopped after epoch 2 of 4 and resumed; dev AUC {:.4} both ways", a.auc))
}

fn config_mechanism() -> Result<String, String> {
    let root = common::fixture("configs");
    let (c, _) = resolve_config("nrms_like", &root, &["learning_rate=0.2", "tracking.sink=null", "epochs=4", "epochs=2"])
        .map_err(|e| e.to_string())?;
    let checks: [(&str, bool); 9] = [
        ("seed from built-in defaults", c.seed == 42),
        ("negatives from built-in defaults", c.negatives == 4),
        ("embedding_dim from default.yaml", c.embedding_dim == 64),
        ("history_len from default.yaml", c.history_len == 20),
        ("batch_size from the dataset overlay", c.batch_size == 16),
        ("title_len from the dataset overlay", c.title_len == 12),
        ("learning_rate from the command line", c.learning_rate == 0.2),
        ("last command-line override wins", c.epochs == 2),
        ("tracking merged deeply", c.tracking.sink == "null" && c.tracking.options.len() == 2),
    ];
    for (what, ok) in checks {
        ensure(ok, || format!("{what}: {c:?}"))?;
    }
    ensure(c.model_extras.get("query_dim") == Some(&ConfigValue::Int(16)), || "unknown key not kept in model_extras".into())?;

    let (other, _) = resolve_config("nrms_like", &root, &["dataset_name=ebnerd-demo"]).map_err(|e| e.to_string())?;
    ensure(other.batch_size == 32, || "overlay applied to the wrong dataset".into())?;

    let expected: Vec<String> =
        serde_json::from_str(&fs::read_to_string(root.join("invalid_model/expected_violations.json")).unwrap()).unwrap();
    let violations = match resolve_config::<&str>("invalid_model", &root, &[]) {
        Err(ConfigError::Invalid(v)) => v,
        other => return Err(format!("expected an aggregate validation error, got {other:?}")),
    };
    let keys: Vec<String> = violations.iter().map(|v| v.key.clone()).collect();
    ensure(keys == expected, || format!("violations {keys:?}, expected {expected:?}"))?;
    ensure(violations.iter().all(|v| !v.value.is_empty() && !v.constraint.is_empty()), || {
        "violation without value or constraint".into()
    })?;
    Ok(format!("9 precedence checks; invalid fixture reports all {} violations", violations.len()))
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("metric oracle equivalence", metric_oracle),
        ("gradient checks", gradient_checks),
        ("planted-signal learning", planted_signal),
        ("reproducibility", reproducibility),
        ("data-parallel contract", data_parallel),
        ("corpus pipeline", corpus_pipeline),
        ("resume equivalence", resume_equivalence),
        ("config mechanism", config_mechanism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
