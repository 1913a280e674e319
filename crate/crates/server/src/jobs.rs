//! In-memory job table. Each job keeps its record and the ordered list of
//! tracking events it produced; subscribers follow the list by index.

use std::collections::HashMap;
use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use newsrec::runner::{TrackingEvent, TrackingSink};
use newsrec::EvalResult;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Download,
    Preprocess,
    Train,
    Evaluate,
}

impl JobKind {
    pub fn is_training(self) -> bool {
        self == JobKind::Train
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Finished,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Finished | JobStatus::Failed)
    }

    fn can_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running) | (JobStatus::Running, JobStatus::Finished | JobStatus::Failed)
        )
    }
}

/// What a finished job points at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobResult {
    Download { dir: String, files: usize, bytes_downloaded: u64 },
    Corpus { dir: String, news: usize, impressions: usize, skipped_rows: usize },
    Run { run_id: String, run_dir: String, phase: String, final_dev: Option<EvalResult> },
    Metrics(EvalResult),
    Predictions { path: String, impressions: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub parameters: serde_json::Value,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

pub struct Job {
    record: Mutex<JobRecord>,
    events: Mutex<Vec<TrackingEvent>>,
    /// Bumped after every event or record change.
    version: watch::Sender<u64>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Job {
    fn new(record: JobRecord) -> Self {
        Self { record: Mutex::new(record), events: Mutex::new(Vec::new()), version: watch::channel(0).0 }
    }

    pub fn record(&self) -> JobRecord {
        lock(&self.record).clone()
    }

    pub fn id(&self) -> String {
        lock(&self.record).job_id.clone()
    }

    fn bump(&self) {
        self.version.send_modify(|v| *v += 1);
    }

    /// Moves to `status` if that is a legal transition; anything else is
    /// ignored so the record never goes backwards.
    pub fn set_status(&self, status: JobStatus) -> bool {
        let mut r = lock(&self.record);
        if !r.status.can_become(status) {
            return false;
        }
        let now = Utc::now();
        r.status = status;
        r.updated_at = now;
        match status {
            JobStatus::Running => r.started_at = Some(now),
            JobStatus::Finished => {
                r.finished_at = Some(now);
                r.progress = 1.0;
            }
            JobStatus::Failed => r.finished_at = Some(now),
            JobStatus::Queued => {}
        }
        drop(r);
        self.bump();
        true
    }

    pub fn set_progress(&self, progress: f64) {
        let mut r = lock(&self.record);
        let p = progress.clamp(0.0, 1.0);
        if p > r.progress && !r.status.is_terminal() {
            r.progress = p;
            r.updated_at = Utc::now();
            drop(r);
            self.bump();
        }
    }

    pub fn finish(&self, outcome: Result<JobResult, (Option<JobResult>, String)>) {
        {
            let mut r = lock(&self.record);
            match &outcome {
                Ok(res) => r.result = Some(res.clone()),
                Err((res, msg)) => {
                    r.result = res.clone();
                    r.error = Some(msg.clone());
                }
            }
        }
        self.set_status(if outcome.is_ok() { JobStatus::Finished } else { JobStatus::Failed });
    }

    pub fn push_event(&self, event: TrackingEvent) {
        if event.name == "progress" {
            if let Some(p) = event.value.as_f64() {
                self.set_progress(p);
            }
        }
        lock(&self.events).push(event);
        self.bump();
    }

    pub fn events(&self) -> Vec<TrackingEvent> {
        lock(&self.events).clone()
    }

    /// Events from index `from` on, plus whether the job had already ended
    /// when they were read (so nothing will follow them).
    pub fn events_since(&self, from: usize) -> (Vec<TrackingEvent>, bool) {
        let done = lock(&self.record).status.is_terminal();
        let events = lock(&self.events);
        (events.get(from..).map(<[_]>::to_vec).unwrap_or_default(), done)
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.version.subscribe()
    }

    /// Resolves once the job reaches a terminal status.
    pub async fn wait(&self) -> JobRecord {
        let mut rx = self.subscribe();
        loop {
            let r = self.record();
            if r.status.is_terminal() {
                return r;
            }
            if rx.changed().await.is_err() {
                return self.record();
            }
        }
    }
}

/// Forwards a run's tracking events into its job.
pub struct JobSink(pub Arc<Job>);

impl TrackingSink for JobSink {
    fn emit(&mut self, event: &TrackingEvent) -> io::Result<()> {
        self.0.push_event(event.clone());
        Ok(())
    }
}

#[derive(Default)]
pub struct JobTable {
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    order: Mutex<Vec<String>>,
    next: AtomicU64,
}

impl JobTable {
    pub fn create(&self, kind: JobKind, parameters: serde_json::Value) -> Arc<Job> {
        let n = self.next.fetch_add(1, Ordering::Relaxed) + 1;
        let job_id = format!("job-{n:05}");
        let now = Utc::now();
        let job = Arc::new(Job::new(JobRecord {
            job_id: job_id.clone(),
            kind,
            status: JobStatus::Queued,
            progress: 0.0,
            created_at: now,
            updated_at: now,
            started_at: None,
            finished_at: None,
            parameters,
            result: None,
            error: None,
        }));
        lock(&self.jobs).insert(job_id.clone(), job.clone());
        lock(&self.order).push(job_id);
        job
    }

    pub fn get(&self, job_id: &str) -> Option<Arc<Job>> {
        lock(&self.jobs).get(job_id).cloned()
    }

    /// Records in submission order.
    pub fn list(&self) -> Vec<JobRecord> {
        let jobs = lock(&self.jobs);
        lock(&self.order).iter().filter_map(|id| jobs.get(id)).map(|j| j.record()).collect()
    }
}
