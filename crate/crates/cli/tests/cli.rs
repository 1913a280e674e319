use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use newsrec::configuration::resolve_config;
use newsrec::corpus::Split;
use newsrec::runner::{evaluate_checkpoint, read_events, run_training, TestOutcome, TrainControl};
use newsrec::EvalResult;
use newsrec_server::{router, AppState, JobResult, ServerConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mind_fixture() -> PathBuf {
    repo().join("crates/core/tests/fixtures/mind")
}

/// Runs the binary in `cwd` with the repository's model configs.
fn newsrec(cwd: &Path, args: &[&str]) -> Output {
    let configs = repo().join("configs");
    Command::new(env!("CARGO_BIN_EXE_newsrec"))
        .current_dir(cwd)
        .arg("--config-root")
        .arg(configs)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json_line(o: &Output) -> Value {
    let text = stdout(o);
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

/// Settings that keep a planted run to a second or two.
const QUICK: [&str; 12] = [
    "--set", "dataset_name=planted",
    "--set", "epochs=2",
    "--set", "embedding_dim=8",
    "--set", "attention_heads=2",
    "--set", "history_len=5",
    "--set", "title_len=6",
];

/// `args`, then the quick settings, then `extra` (which wins over them).
fn quick<'a>(args: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(QUICK).chain(extra.iter().copied()).collect()
}

fn synth(dir: &Path) {
    let o = newsrec(dir, &["synth", "--small"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn preprocess_fixture_writes_a_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let raw = mind_fixture();
    let o = newsrec(dir.path(), &["preprocess", "mind-small", "--raw", raw.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json_line(&o);
    assert_eq!(v["result"]["news"], 20);
    assert_eq!(v["result"]["impressions"], 10);
    let corpus = dir.path().join("data/mind-small/corpus");
    assert!(corpus.join("meta").is_file());
    assert_eq!(PathBuf::from(v["result_path"].as_str().unwrap()), PathBuf::from("data/mind-small/corpus"));

    let o = newsrec(dir.path(), &["preprocess", "mind-small", "--raw", raw.to_str().unwrap(), "--out", "small", "--set", "max_vocab_size=5"]);
    assert_eq!(o.status.code(), Some(0));
    let o = newsrec(dir.path(), &["preprocess", "mind-small", "--raw", raw.to_str().unwrap(), "--set", "epochs=3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epochs"));
}

#[test]
fn train_evaluate_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = newsrec(dir.path(), &quick(&["train", "nrms_like", "--json"], &["--set", "epochs=1"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json_line(&o);
    let run_dir = dir.path().join(v["result"]["run_dir"].as_str().unwrap());
    let ckpt = run_dir.join("epoch_1.ckpt");
    assert!(ckpt.is_file());
    assert!(!read_events(&run_dir.join("events.jsonl")).unwrap().is_empty());

    let o = newsrec(dir.path(), &["evaluate", ckpt.to_str().unwrap(), "dev"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    for m in ["auc=", "mrr=", "ndcg5=", "ndcg10="] {
        assert!(line.contains(m), "{line}");
    }
    let o = newsrec(dir.path(), &["evaluate", ckpt.to_str().unwrap(), "dev", "--json"]);
    let cli: EvalResult = serde_json::from_value(json_line(&o)["result"].clone()).unwrap();
    let direct = match evaluate_checkpoint(&ckpt, Split::Dev, Some(&dir.path().join("data/planted/corpus")), None).unwrap() {
        TestOutcome::Metrics(r) => r,
        other => panic!("{other:?}"),
    };
    assert_eq!(cli, direct);
    let train_dev: EvalResult = serde_json::from_value(v["result"]["final_dev"].clone()).unwrap();
    assert_eq!(train_dev, direct);

    let o = newsrec(dir.path(), &["predict", ckpt.to_str().unwrap(), "test", "preds.tsv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let preds = std::fs::read_to_string(dir.path().join("preds.tsv")).unwrap();
    assert_eq!(preds.lines().count(), 5);

    // unlabeled split cannot be evaluated, only predicted
    let o = newsrec(dir.path(), &["evaluate", ckpt.to_str().unwrap(), "test"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("scored into"));

    let o = newsrec(dir.path(), &["runs", "--json"]);
    assert_eq!(json_line(&o)["result"].as_array().unwrap().len(), 1);
}

#[test]
fn cli_training_matches_the_library_call() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = newsrec(dir.path(), &quick(&["train", "gnn_like", "--seed", "11", "--json"], &[]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cli: EvalResult = serde_json::from_value(json_line(&o)["result"]["final_dev"].clone()).unwrap();

    let corpus = dir.path().join("data/planted/corpus");
    let mut overrides: Vec<String> = vec!["seed=11".into()];
    overrides.extend(QUICK.chunks(2).map(|p| p[1].to_string()));
    overrides.push(format!("corpus_dir={}", corpus.display()));
    overrides.push(format!("output_dir={}", dir.path().join("lib-runs").display()));
    let (config, _) = resolve_config("gnn_like", &repo().join("configs"), &overrides).unwrap();
    assert_eq!(config.seed, 11);
    let direct = run_training(&config, &TrainControl::default(), None).unwrap();
    assert_eq!(Some(cli), direct.final_dev);
}

#[test]
fn api_and_cli_training_agree() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = newsrec(dir.path(), &quick(&["train", "nrms_like", "--json"], &[]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cli: EvalResult = serde_json::from_value(json_line(&o)["result"]["final_dev"].clone()).unwrap();

    let mut overrides = serde_json::Map::new();
    for pair in QUICK.chunks(2) {
        let (k, v) = pair[1].split_once('=').unwrap();
        overrides.insert(k.into(), json!(v));
    }
    overrides.insert("corpus_dir".into(), json!(dir.path().join("data/planted/corpus")));
    let state = AppState::new(ServerConfig {
        config_root: repo().join("configs"),
        data_dir: dir.path().join("data"),
        runs_dir: dir.path().join("api-runs"),
        ..Default::default()
    });
    let app = router(state.clone());
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let record = runtime.block_on(async {
        let body = json!({"kind": "train", "parameters": {"model": "nrms_like", "overrides": overrides}});
        let req = Request::post("/api/jobs").header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
        let resp = app.oneshot(req).await.unwrap();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let posted: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(posted["status"], "queued");
        state.jobs.get(posted["job_id"].as_str().unwrap()).unwrap().wait().await
    });
    let api = match record.result {
        Some(JobResult::Run { final_dev: Some(d), .. }) => d,
        other => panic!("{other:?} {:?}", record.error),
    };
    for (name, a, c) in [("auc", api.auc, cli.auc), ("mrr", api.mrr, cli.mrr), ("ndcg5", api.ndcg5, cli.ndcg5), ("ndcg10", api.ndcg10, cli.ndcg10)] {
        assert!((a - c).abs() <= 1e-6, "{name}: api {a} cli {c}");
    }
}

#[test]
fn resume_continues_in_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = newsrec(dir.path(), &quick(&["train", "nrms_like", "--stop-after-epoch", "1", "--json"], &[]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let first = json_line(&o);
    assert_eq!(first["result"]["epochs_completed"], 1);
    let run_dir = first["result"]["run_dir"].as_str().unwrap().to_string();
    let ckpt = format!("{run_dir}/epoch_1.ckpt");
    let o = newsrec(dir.path(), &quick(&["train", "nrms_like", "--resume", &ckpt, "--json"], &[]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let second = json_line(&o);
    assert_eq!(second["result"]["run_dir"], run_dir);
    assert_eq!(second["result"]["epochs_completed"], 2);

    // a changed config needs the explicit flag
    let o = newsrec(dir.path(), &quick(&["train", "nrms_like", "--resume", &ckpt], &["--set", "epochs=3"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("override flag"), "{}", stderr(&o));
}

#[test]
fn exit_codes_separate_user_and_pipeline_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = newsrec(dir.path(), &["train", "nrms_like", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = newsrec(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));

    let o = newsrec(dir.path(), &["train", "nrms_like", "--set", "batch_size=0", "--set", "learning_rate=-2"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("batch_size") && err.contains("learning_rate"), "{err}");
    assert!(!err.contains("panicked") && !err.contains("backtrace"));

    let o = newsrec(dir.path(), &["train", "no_such_model"]);
    assert_eq!(o.status.code(), Some(1));
    let o = newsrec(dir.path(), &["train", "nrms_like", "--set", "dataset_name=absent"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no corpus"));
    let o = newsrec(dir.path(), &["download", "imaginary"]);
    assert_eq!(o.status.code(), Some(1));
    let o = newsrec(dir.path(), &["evaluate", "missing.ckpt", "dev"]);
    assert_eq!(o.status.code(), Some(1));
    let o = newsrec(dir.path(), &["evaluate", "missing.ckpt", "holdout", "--json"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json_line(&o)["ok"], false);

    // broken inputs discovered while working are pipeline failures
    std::fs::write(dir.path().join("broken.ckpt"), "{").unwrap();
    let o = newsrec(dir.path(), &["evaluate", "broken.ckpt", "dev"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken.ckpt"));

    synth(dir.path());
    let o = newsrec(dir.path(), &quick(&["train", "nrms_like", "--stop-after-epoch", "1", "--json"], &[]));
    let run_dir = json_line(&o)["result"]["run_dir"].as_str().unwrap().to_string();
    let ckpt = format!("{run_dir}/epoch_1.ckpt");
    let o = newsrec(
        dir.path(),
        &quick(&["train", "nrms_like", "--resume", &ckpt, "--allow-fingerprint-mismatch"], &["--set", "learning_rate=1e300"]),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
    assert!(dir.path().join(&ckpt).is_file());
}

#[test]
fn help_documents_every_command_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = newsrec(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for word in ["download", "preprocess", "train", "evaluate", "predict", "serve", "--seed", "--config-root", "--set", "--json"] {
        assert!(text.contains(word), "{word}");
    }
    for (cmd, flags) in [
        ("train", &["--corpus", "--resume", "--allow-fingerprint-mismatch", "--stop-after-epoch"][..]),
        ("serve", &["--host", "--port", "--data-dir", "--runs-dir", "--static"][..]),
        ("download", &["--dir", "--mirror"][..]),
        ("preprocess", &["--raw", "--out", "min_freq"][..]),
    ] {
        let o = newsrec(dir.path(), &[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{cmd} {f}");
        }
    }
}

#[test]
fn synth_writes_embeddings_for_the_embedding_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = newsrec(dir.path(), &["synth", "--seed", "3", "--json", "--small"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json_line(&o);
    assert_eq!(v["result"]["news"], 40);
    assert!(dir.path().join("data/planted/news_embeddings.tsv").is_file());
    let o = newsrec(dir.path(), &quick(&["train", "llm_like", "--json"], &["--set", "epochs=1"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(json_line(&o)["result"]["final_dev"]["auc"].is_number());
}

#[test]
fn serve_answers_over_tcp() {
    use std::io::{BufRead, BufReader, Read, Write};
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_newsrec"))
        .current_dir(dir.path())
        .args(["--config-root", repo().join("configs").to_str().unwrap(), "serve", "--port", "0"])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on http://").expect("address line").to_string();
    let get = |path: &str| {
        let mut s = std::net::TcpStream::connect(&addr).unwrap();
        write!(s, "GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        resp
    };
    let models = get("/api/models");
    let result = std::panic::catch_unwind(|| {
        assert!(models.starts_with("HTTP/1.1 200"), "{models}");
        assert!(models.contains("\"nrms_like\""));
        assert!(get("/api/jobs/job-1").starts_with("HTTP/1.1 404"));
    });
    child.kill().unwrap();
    child.wait().unwrap();
    result.unwrap();
}
