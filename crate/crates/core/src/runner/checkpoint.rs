//! Checkpoint files: one JSON document holding the schema version, config
//! fingerprint, full config, parameters and optimizer velocity by name, and
//! the run state. Floats are written in round-trip form, so loading gives
//! back bitwise-equal parameters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunState, RunnerError};
use crate::configuration::ExperimentConfig;
use crate::models::{DenseMatrix, ModelSpec, NewsRecModel, Weights};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub fingerprint: String,
    pub config: ExperimentConfig,
    pub spec: ModelSpec,
    pub params: BTreeMap<String, DenseMatrix>,
    pub velocity: BTreeMap<String, DenseMatrix>,
    pub state: RunState,
}

impl Checkpoint {
    pub fn new(config: &ExperimentConfig, model: &NewsRecModel, velocity: &Weights, state: &RunState) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            fingerprint: config.fingerprint(),
            config: config.clone(),
            spec: model.spec.clone(),
            params: model.weights.named(),
            velocity: velocity.named(),
            state: state.clone(),
        }
    }

    /// Errors when the checkpoint was written under a different config,
    /// unless `allow_mismatch` is set.
    pub fn check_fingerprint(&self, config: &ExperimentConfig, allow_mismatch: bool) -> Result<(), RunnerError> {
        let expected = config.fingerprint();
        if expected != self.fingerprint && !allow_mismatch {
            return Err(RunnerError::FingerprintMismatch { expected, found: self.fingerprint.clone() });
        }
        Ok(())
    }

    /// Rebuilds the model; parameter names and shapes must match the spec.
    pub fn model(&self) -> Result<NewsRecModel, RunnerError> {
        let mut model = NewsRecModel::new(self.spec.clone(), 0)?;
        model.weights.load_named(&self.params)?;
        Ok(model)
    }

    pub fn velocity_like(&self, weights: &Weights) -> Result<Weights, RunnerError> {
        let mut v = weights.zeros_like();
        if !self.velocity.is_empty() {
            v.load_named(&self.velocity)?;
        }
        Ok(v)
    }
}

/// Writes through a temporary file and a rename so a crash never leaves a
/// half-written checkpoint behind.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| RunnerError::io(parent, e))?;
    }
    let text = serde_json::to_string(checkpoint).map_err(|e| RunnerError::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, text).map_err(|e| RunnerError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| RunnerError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, RunnerError> {
    let text = fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
    let bad = |message: String| RunnerError::Checkpoint { path: path.to_path_buf(), message };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(format!("corrupt file: {e}")))?;
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(CHECKPOINT_SCHEMA_VERSION as u64) {
        return Err(bad(format!("schema version {version:?} is not {CHECKPOINT_SCHEMA_VERSION}")));
    }
    serde_json::from_value(value).map_err(|e| bad(format!("corrupt file: {e}")))
}
