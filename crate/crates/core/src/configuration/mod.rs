//! Per-model configuration: `config_root/<model>/default.yaml`, an optional
//! `config_root/<model>/<dataset>.yaml` overlay, then dotted `key=value`
//! overrides, validated into an [`ExperimentConfig`].
//!
//! Precedence, lowest first: built-in defaults, `default.yaml`, the dataset
//! overlay, command-line overrides.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

mod experiment;
pub mod tree;

pub use experiment::{
    summary, validate_config, DeviceKind, DevicePlan, ExperimentConfig, ModelFamily, TrackingConfig, Violation,
};
pub use tree::{ConfigMap, ConfigValue};

use tree::{parse_override_value, parse_yaml};

/// Top-level keys with a fixed meaning; anything else belongs to `model_extras`.
pub const KNOWN_KEYS: [&str; 18] = [
    "model_name",
    "dataset_name",
    "corpus_dir",
    "output_dir",
    "seed",
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "dropout",
    "embedding_dim",
    "attention_heads",
    "history_len",
    "title_len",
    "negatives",
    "device_plan",
    "tracking",
    "model_extras",
];

pub const DEFAULT_FILE: &str = "default.yaml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("no configuration for this model: expected {} to exist", .path.display())]
    Missing { path: PathBuf },
    #[error("{}:{line}:{column}: {message}", .file.display())]
    Syntax { file: PathBuf, line: usize, column: usize, message: String },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("override `{0}` must look like key=value")]
    MalformedOverride(String),
    #[error("override of unknown key `{0}` (new keys may only be created under model_extras)")]
    UnknownKey(String),
    #[error("cannot set `{key}` to `{value}`: expected {expected}")]
    Coercion { key: String, value: String, expected: &'static str },
    #[error("invalid configuration:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  - {x}")).collect::<Vec<_>>().join("\n")
}

/// A configuration file after parsing, with non-fatal findings.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub tree: ConfigMap,
    pub warnings: Vec<String>,
    pub source: PathBuf,
}

fn read_yaml(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
    let doc = parse_yaml(&text).map_err(|e| ConfigError::Syntax {
        file: path.to_path_buf(),
        line: e.line,
        column: e.column,
        message: e.message,
    })?;
    for w in &doc.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(LoadedConfig { tree: nest_unknown_keys(doc.root), warnings: doc.warnings, source: path.to_path_buf() })
}

/// Moves unknown top-level keys into `model_extras`.
pub fn nest_unknown_keys(mut root: ConfigMap) -> ConfigMap {
    let unknown: Vec<String> = root.keys().filter(|k| !KNOWN_KEYS.contains(&k.as_str())).cloned().collect();
    if unknown.is_empty() {
        return root;
    }
    let mut extras = match root.remove("model_extras") {
        Some(ConfigValue::Map(m)) => m,
        Some(other) => {
            // keep the malformed value visible to validation
            root.insert("model_extras".into(), other);
            return root;
        }
        None => ConfigMap::new(),
    };
    for key in unknown {
        if let Some(v) = root.remove(&key) {
            extras.insert(key, v);
        }
    }
    root.insert("model_extras".into(), ConfigValue::Map(extras));
    root
}

/// Reads `config_root/<model_name>/default.yaml`.
pub fn load_config(model_name: &str, config_root: &Path) -> Result<LoadedConfig, ConfigError> {
    let dir = config_root.join(model_name);
    if !dir.is_dir() {
        return Err(ConfigError::Missing { path: dir });
    }
    let file = dir.join(DEFAULT_FILE);
    if !file.is_file() {
        return Err(ConfigError::Missing { path: file });
    }
    let mut loaded = read_yaml(&file)?;
    loaded.tree.entry("model_name".into()).or_insert_with(|| ConfigValue::Str(model_name.into()));
    Ok(loaded)
}

/// Reads the optional per-dataset overlay `config_root/<model>/<dataset>.yaml`.
pub fn load_overlay(model_name: &str, dataset_name: &str, config_root: &Path) -> Result<Option<LoadedConfig>, ConfigError> {
    let file = config_root.join(model_name).join(format!("{dataset_name}.yaml"));
    if file.is_file() {
        read_yaml(&file).map(Some)
    } else {
        Ok(None)
    }
}

/// Recursively merges `overlay` into `base`; overlay leaves win.
pub fn deep_merge(base: &mut ConfigMap, overlay: ConfigMap) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(ConfigValue::Map(b)), ConfigValue::Map(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn coerce(key: &str, base: &ConfigValue, raw: &str) -> Result<ConfigValue, ConfigError> {
    let err = |expected| ConfigError::Coercion { key: key.to_string(), value: raw.to_string(), expected };
    let text = raw.trim();
    match base {
        ConfigValue::Int(_) => text.parse::<i64>().map(ConfigValue::Int).map_err(|_| err("an integer")),
        ConfigValue::Float(_) => text.parse::<f64>().map(ConfigValue::Float).map_err(|_| err("a real number")),
        ConfigValue::Bool(_) => match text {
            "true" | "True" => Ok(ConfigValue::Bool(true)),
            "false" | "False" => Ok(ConfigValue::Bool(false)),
            _ => Err(err("true or false")),
        },
        ConfigValue::Str(_) => Ok(ConfigValue::Str(text.to_string())),
        ConfigValue::Null => Ok(parse_override_value(text)),
        ConfigValue::List(_) => match parse_override_value(text) {
            v @ ConfigValue::List(_) => Ok(v),
            _ => Err(err("a list such as [a, b]")),
        },
        ConfigValue::Map(_) => match parse_override_value(text) {
            v @ ConfigValue::Map(_) => Ok(v),
            _ => Err(err("a map; set one of its keys with a dotted path instead")),
        },
    }
}

/// Applies `key=value` overrides in order. Dotted keys address nested maps;
/// each new leaf takes the type of the leaf it replaces.
pub fn merge_overrides<S: AsRef<str>>(base: &ConfigMap, overrides: &[S]) -> Result<ConfigMap, ConfigError> {
    let mut tree = base.clone();
    for item in overrides {
        let item = item.as_ref();
        let (key, value) = item.split_once('=').ok_or_else(|| ConfigError::MalformedOverride(item.to_string()))?;
        let key = key.trim();
        let path: Vec<&str> = key.split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::MalformedOverride(item.to_string()));
        }
        let open = path[0] == "model_extras";
        let mut node = &mut tree;
        for segment in &path[..path.len() - 1] {
            if !node.contains_key(*segment) {
                if !open {
                    return Err(ConfigError::UnknownKey(key.to_string()));
                }
                node.insert(segment.to_string(), ConfigValue::Map(ConfigMap::new()));
            }
            node = match node.get_mut(*segment) {
                Some(ConfigValue::Map(m)) => m,
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            };
        }
        let leaf = path[path.len() - 1];
        let new_value = match node.get(leaf) {
            Some(existing) => coerce(key, existing, value)?,
            None if open => parse_override_value(value),
            None => return Err(ConfigError::UnknownKey(key.to_string())),
        };
        node.insert(leaf.to_string(), new_value);
    }
    Ok(tree)
}

/// Built-in defaults as a tree, so overrides of documented keys always resolve.
pub fn default_tree(model_name: &str) -> ConfigMap {
    ExperimentConfig::defaults(model_name, "").to_tree()
}

/// Full resolution: defaults, `default.yaml`, dataset overlay, overrides, validation.
pub fn resolve_config<S: AsRef<str>>(
    model_name: &str,
    config_root: &Path,
    overrides: &[S],
) -> Result<(ExperimentConfig, Vec<String>), ConfigError> {
    let loaded = load_config(model_name, config_root)?;
    let mut warnings = loaded.warnings;
    let mut explicit_corpus = loaded.tree.contains_key("corpus_dir");
    let mut tree = default_tree(model_name);
    deep_merge(&mut tree, loaded.tree);

    let probe = merge_overrides(&tree, overrides)?;
    let dataset = probe.get("dataset_name").and_then(ConfigValue::as_str).unwrap_or("").to_string();
    if !dataset.is_empty() {
        if let Some(overlay) = load_overlay(model_name, &dataset, config_root)? {
            warnings.extend(overlay.warnings);
            explicit_corpus |= overlay.tree.contains_key("corpus_dir");
            deep_merge(&mut tree, overlay.tree);
        }
    }
    let mut tree = merge_overrides(&tree, overrides)?;
    explicit_corpus |= overrides.iter().any(|o| o.as_ref().split('=').next().map(str::trim) == Some("corpus_dir"));
    if !explicit_corpus {
        // let validation derive it from the resolved dataset name
        tree.remove("corpus_dir");
    }
    Ok((validate_config(&tree)?, warnings))
}

/// Model directories under `config_root` that contain a `default.yaml`.
pub fn list_models(config_root: &Path) -> Vec<String> {
    let Ok(entries) = fs::read_dir(config_root) else { return Vec::new() };
    let mut names: Vec<String> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().join(DEFAULT_FILE).is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    names
}
