//! Tracking events and sinks.
//!
//! A sink failure is logged and counted and never stops training.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::configuration::TrackingConfig;

pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Scalar,
    Status,
    Artifact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingEvent {
    pub run_id: String,
    /// Seconds since the Unix epoch.
    pub wall_time: f64,
    pub step: u64,
    /// Emission order within the run, starting at 0.
    pub seq: u64,
    pub kind: EventKind,
    pub name: String,
    pub value: serde_json::Value,
}

pub trait TrackingSink: Send {
    fn emit(&mut self, event: &TrackingEvent) -> io::Result<()>;

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub struct NullSink;

impl TrackingSink for NullSink {
    fn emit(&mut self, _: &TrackingEvent) -> io::Result<()> {
        Ok(())
    }
}

/// Appends one JSON line per event.
pub struct FileSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl FileSink {
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl TrackingSink for FileSink {
    fn emit(&mut self, event: &TrackingEvent) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, event)?;
        self.out.write_all(b"\n")
    }

    fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

impl Drop for FileSink {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

/// Keeps events in memory behind a shared handle.
#[derive(Clone, Default)]
pub struct MemorySink {
    pub events: Arc<Mutex<Vec<TrackingEvent>>>,
}

impl TrackingSink for MemorySink {
    fn emit(&mut self, event: &TrackingEvent) -> io::Result<()> {
        self.events.lock().expect("memory sink lock").push(event.clone());
        Ok(())
    }
}

/// Sends every event to each inner sink; the first error is reported after
/// all sinks have been tried.
pub struct TeeSink(pub Vec<Box<dyn TrackingSink>>);

impl TrackingSink for TeeSink {
    fn emit(&mut self, event: &TrackingEvent) -> io::Result<()> {
        let mut first = Ok(());
        for s in &mut self.0 {
            if let Err(e) = s.emit(event) {
                if first.is_ok() {
                    first = Err(e);
                }
            }
        }
        first
    }

    fn flush(&mut self) -> io::Result<()> {
        let mut first = Ok(());
        for s in &mut self.0 {
            if let Err(e) = s.flush() {
                if first.is_ok() {
                    first = Err(e);
                }
            }
        }
        first
    }
}

/// Sink named by the config: `file` writes `run_dir/events.jsonl` (or
/// `options.path`, relative to the run directory), `null` drops everything.
pub fn open_sink(tracking: &TrackingConfig, run_dir: &Path) -> io::Result<Box<dyn TrackingSink>> {
    match events_path(tracking, run_dir) {
        None => Ok(Box::new(NullSink)),
        Some(path) => Ok(Box::new(FileSink::open(&path)?)),
    }
}

/// The configured sink, teed with `extra` when given.
pub fn run_sink(
    tracking: &TrackingConfig,
    run_dir: &Path,
    extra: Option<Box<dyn TrackingSink>>,
) -> io::Result<Box<dyn TrackingSink>> {
    let base = open_sink(tracking, run_dir)?;
    Ok(match extra {
        Some(x) => Box::new(TeeSink(vec![base, x])),
        None => base,
    })
}

/// Path of the file sink's output for a run, if the config uses one.
pub fn events_path(tracking: &TrackingConfig, run_dir: &Path) -> Option<PathBuf> {
    match tracking.sink.as_str() {
        "null" => None,
        _ => Some(
            tracking
                .options
                .get("path")
                .and_then(|v| v.as_str())
                .map(|p| run_dir.join(p))
                .unwrap_or_else(|| run_dir.join(EVENTS_FILE)),
        ),
    }
}

pub fn read_events(path: &Path) -> io::Result<Vec<TrackingEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        events.push(event);
    }
    Ok(events)
}

/// Stamps events with the run id, wall time and sequence number and hands
/// them to a sink.
pub struct Tracker {
    run_id: String,
    sink: Box<dyn TrackingSink>,
    next_seq: u64,
    failures: u64,
}

impl Tracker {
    pub fn new(run_id: impl Into<String>, sink: Box<dyn TrackingSink>, next_seq: u64) -> Self {
        Self { run_id: run_id.into(), sink, next_seq, failures: 0 }
    }

    pub fn emit(&mut self, kind: EventKind, name: &str, step: u64, value: serde_json::Value) {
        let event = TrackingEvent {
            run_id: self.run_id.clone(),
            wall_time: now_seconds(),
            step,
            seq: self.next_seq,
            kind,
            name: name.to_string(),
            value,
        };
        self.next_seq += 1;
        if let Err(e) = self.sink.emit(&event) {
            self.failures += 1;
            log::warn!("tracking sink failed on event {} ({name}): {e}", event.seq);
        }
    }

    pub fn scalar(&mut self, name: &str, step: u64, value: f64) {
        self.emit(EventKind::Scalar, name, step, serde_json::json!(value));
    }

    pub fn status(&mut self, name: &str, step: u64, value: impl Serialize) {
        self.emit(EventKind::Status, name, step, serde_json::to_value(value).unwrap_or_default());
    }

    pub fn artifact(&mut self, name: &str, step: u64, path: &Path) {
        self.emit(EventKind::Artifact, name, step, serde_json::json!(path.display().to_string()));
    }

    pub fn flush(&mut self) {
        if let Err(e) = self.sink.flush() {
            self.failures += 1;
            log::warn!("tracking sink flush failed: {e}");
        }
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn failures(&self) -> u64 {
        self.failures
    }
}

pub(crate) fn now_seconds() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}
