//! Route handlers.

use std::collections::{BTreeSet, VecDeque};
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use newsrec::configuration::{list_models, resolve_config};
use newsrec::corpus::download::{KNOWN_DATASETS, MANIFEST_FILE};
use newsrec::corpus::store::META_FILE;
use newsrec::runner::{list_runs, TrackingEvent};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::watch;

use crate::jobs::{Job, JobKind, JobStatus};
use crate::tasks::{dataset_dirs, Rejection, Task};
use crate::AppState;

pub fn routes() -> Router<AppState> {
    Router::new()
        .route("/api/jobs", post(post_job).get(list_jobs))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/events", get(stream_events))
        .route("/api/runs", get(runs))
        .route("/api/datasets", get(datasets))
        .route("/api/models", get(models))
}

pub struct ApiError(StatusCode, Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<Rejection> for ApiError {
    fn from(r: Rejection) -> Self {
        match r {
            Rejection::Invalid(violations) => ApiError(
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"error": "invalid parameters", "violations": violations}),
            ),
            Rejection::BadRequest(message) => ApiError(StatusCode::BAD_REQUEST, json!({"error": message})),
        }
    }
}

fn not_found(what: &str, id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, json!({"error": format!("no {what} `{id}`")}))
}

#[derive(Debug, Deserialize)]
pub struct JobRequest {
    pub kind: JobKind,
    #[serde(default)]
    pub parameters: Value,
}

async fn post_job(State(state): State<AppState>, Json(req): Json<JobRequest>) -> Result<impl IntoResponse, ApiError> {
    let task = Task::prepare(req.kind, &req.parameters, &state.config)?;
    let job = state.jobs.create(req.kind, req.parameters);
    let record = job.record();
    let gate = if req.kind.is_training() { state.trainers.clone() } else { state.data_workers.clone() };
    tokio::spawn(async move {
        // the semaphore hands out permits in request order
        let Ok(_permit) = gate.acquire_owned().await else { return };
        job.set_status(JobStatus::Running);
        let worker = job.clone();
        let outcome = tokio::task::spawn_blocking(move || task.execute(&worker))
            .await
            .unwrap_or_else(|e| Err((None, format!("job panicked: {e}"))));
        if let Err((_, message)) = &outcome {
            log::warn!("{} failed: {message}", job.id());
        }
        job.finish(outcome);
    });
    Ok((StatusCode::ACCEPTED, Json(record)))
}

async fn list_jobs(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.jobs.list())
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let job = state.jobs.get(&id).ok_or_else(|| not_found("job", &id))?;
    Ok(Json(job.record()))
}

struct Cursor {
    job: Arc<Job>,
    rx: watch::Receiver<u64>,
    next: usize,
    pending: VecDeque<TrackingEvent>,
    done: bool,
}

/// Replays a job's events from `from`, then follows new ones until the job
/// ends. Event ids are positions in the job's event list, so a client can
/// reconnect with `Last-Event-ID` without seeing duplicates.
pub fn event_stream(job: Arc<Job>, from: usize) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = job.subscribe();
    let cursor = Cursor { job, rx, next: from, pending: VecDeque::new(), done: false };
    futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(event) = c.pending.pop_front() {
                let id = c.next;
                c.next += 1;
                let sse = Event::default()
                    .id(id.to_string())
                    .event("tracking")
                    .json_data(&event)
                    .expect("tracking events serialise");
                return Some((Ok(sse), c));
            }
            if c.done {
                return None;
            }
            let (events, ended) = c.job.events_since(c.next);
            c.done = ended;
            if events.is_empty() && !ended && c.rx.changed().await.is_err() {
                c.done = true;
            }
            c.pending.extend(events);
        }
    })
}

async fn stream_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<impl IntoResponse, ApiError> {
    let job = state.jobs.get(&id).ok_or_else(|| not_found("job", &id))?;
    let from = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<usize>().ok())
        .map_or(0, |last| last + 1);
    Ok(Sse::new(event_stream(job, from)).keep_alive(KeepAlive::default()))
}

async fn runs(State(state): State<AppState>) -> impl IntoResponse {
    let dir = state.config.runs_dir.clone();
    let runs = tokio::task::spawn_blocking(move || list_runs(&dir)).await.unwrap_or_default();
    Json(runs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStatus {
    pub name: String,
    /// Whether the dataset can be downloaded by name.
    pub downloadable: bool,
    pub raw_dir: String,
    pub corpus_dir: String,
    pub downloaded: bool,
    pub preprocessed: bool,
    /// `missing`, `downloaded` or `preprocessed`.
    pub state: String,
}

async fn datasets(State(state): State<AppState>) -> impl IntoResponse {
    let data_dir = state.config.data_dir.clone();
    let mut names: BTreeSet<String> = KNOWN_DATASETS.iter().map(|s| s.to_string()).collect();
    if let Ok(entries) = std::fs::read_dir(&data_dir) {
        names.extend(entries.filter_map(Result::ok).filter(|e| e.path().is_dir()).filter_map(|e| e.file_name().into_string().ok()));
    }
    let list: Vec<DatasetStatus> = names
        .into_iter()
        .map(|name| {
            let (raw, corpus) = dataset_dirs(&data_dir, &name);
            let downloaded = raw.join(MANIFEST_FILE).is_file();
            let preprocessed = corpus.join(META_FILE).is_file();
            let state = if preprocessed {
                "preprocessed"
            } else if downloaded {
                "downloaded"
            } else {
                "missing"
            };
            DatasetStatus {
                downloadable: KNOWN_DATASETS.contains(&name.as_str()),
                raw_dir: raw.display().to_string(),
                corpus_dir: corpus.display().to_string(),
                downloaded,
                preprocessed,
                state: state.to_string(),
                name,
            }
        })
        .collect();
    Json(list)
}

async fn models(State(state): State<AppState>) -> impl IntoResponse {
    let root = state.config.config_root.clone();
    let list: Vec<Value> = list_models(&root)
        .into_iter()
        .map(|name| match resolve_config::<&str>(&name, &root, &[]) {
            Ok((config, _)) => json!({"name": name, "defaults": config}),
            Err(e) => json!({"name": name, "defaults": null, "error": e.to_string()}),
        })
        .collect();
    Json(list)
}
