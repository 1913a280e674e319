//! HTTP control API for the newsrec pipeline.
//!
//! Jobs (download, preprocess, train, evaluate) are posted to `/api/jobs`,
//! run on a small worker pool and report through the same tracking events a
//! command-line run writes. `/api/jobs/{id}/events` streams those events as
//! server-sent events.

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tower_http::services::{ServeDir, ServeFile};

pub mod api;
pub mod jobs;
pub mod tasks;

pub use jobs::{Job, JobKind, JobRecord, JobResult, JobStatus, JobTable};
pub use tasks::{Rejection, Task};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Per-model configuration directories.
    pub config_root: PathBuf,
    /// Datasets live in `<data_dir>/<name>/raw` and `<data_dir>/<name>/corpus`.
    pub data_dir: PathBuf,
    /// Where training jobs create their run directories.
    pub runs_dir: PathBuf,
    /// Training jobs allowed to run at once.
    pub max_trainers: usize,
    /// Download, preprocess and evaluate jobs allowed to run at once.
    pub data_workers: usize,
    /// Built web interface to serve at `/`, if any.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            config_root: PathBuf::from("configs"),
            data_dir: PathBuf::from("data"),
            runs_dir: PathBuf::from("runs"),
            max_trainers: 1,
            data_workers: 1,
            static_dir: None,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub config: Arc<ServerConfig>,
    pub jobs: Arc<JobTable>,
    trainers: Arc<Semaphore>,
    data_workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            trainers: Arc::new(Semaphore::new(config.max_trainers.max(1))),
            data_workers: Arc::new(Semaphore::new(config.data_workers.max(1))),
            config: Arc::new(config),
            jobs: Arc::new(JobTable::default()),
        }
    }
}

pub fn router(state: AppState) -> Router {
    let static_dir = state.config.static_dir.clone();
    let app = api::routes().with_state(state);
    match static_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            app.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)))
        }
        None => app,
    }
}

/// Binds `addr` and returns the bound address with a future that serves
/// until the process ends.
pub async fn bind(
    config: ServerConfig,
    addr: SocketAddr,
) -> io::Result<(SocketAddr, impl std::future::Future<Output = io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(AppState::new(config));
    Ok((local, async move { axum::serve(listener, app).await }))
}
