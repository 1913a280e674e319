use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tree::{ConfigMap, ConfigValue};
use super::{nest_unknown_keys, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Single,
    SimulatedDataParallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DevicePlan {
    pub kind: DeviceKind,
    pub n_workers: usize,
}

impl DevicePlan {
    pub fn single() -> Self {
        Self { kind: DeviceKind::Single, n_workers: 1 }
    }

    pub fn data_parallel(n_workers: usize) -> Self {
        Self { kind: DeviceKind::SimulatedDataParallel, n_workers }
    }

    /// Number of replicas a step is sharded over.
    pub fn replicas(&self) -> usize {
        match self.kind {
            DeviceKind::Single => 1,
            DeviceKind::SimulatedDataParallel => self.n_workers.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub sink: String,
    #[serde(default)]
    pub options: ConfigMap,
}

/// Which reference architecture a model name trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    /// Title self-attention news encoder, history self-attention user encoder.
    Attention,
    /// Attention news encoder, click-graph neighbour aggregation for users.
    Graph,
    /// Precomputed news embeddings projected to `embedding_dim`, attention user encoder.
    PrecomputedEmbedding,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Attention => "attention",
            ModelFamily::Graph => "graph",
            ModelFamily::PrecomputedEmbedding => "precomputed_embedding",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "attention" => Some(Self::Attention),
            "graph" | "gnn" => Some(Self::Graph),
            "precomputed_embedding" | "llm" | "embedding" => Some(Self::PrecomputedEmbedding),
            _ => None,
        }
    }

    /// Family implied by one of the bundled model names.
    pub fn from_model_name(name: &str) -> Option<Self> {
        if name.starts_with("nrms") || name.starts_with("attention") {
            Some(Self::Attention)
        } else if name.starts_with("gnn") || name.starts_with("graph") {
            Some(Self::Graph)
        } else if name.starts_with("llm") {
            Some(Self::PrecomputedEmbedding)
        } else {
            None
        }
    }
}

/// Fully resolved settings for one run. Construct through [`validate_config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model_name: String,
    pub dataset_name: String,
    pub corpus_dir: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub dropout: f64,
    pub embedding_dim: usize,
    pub attention_heads: usize,
    pub history_len: usize,
    pub title_len: usize,
    pub negatives: usize,
    pub device_plan: DevicePlan,
    pub tracking: TrackingConfig,
    pub model_extras: ConfigMap,
}

/// One failed constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub key: String,
    pub value: String,
    pub constraint: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}: {}", self.key, self.value, self.constraint)
    }
}

pub const DEFAULT_HOPS: i64 = 1;

impl ExperimentConfig {
    /// The documented defaults for every field.
    pub fn defaults(model_name: &str, dataset_name: &str) -> Self {
        Self {
            model_name: model_name.to_string(),
            dataset_name: dataset_name.to_string(),
            corpus_dir: default_corpus_dir(dataset_name),
            output_dir: PathBuf::from("runs"),
            seed: 42,
            epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            momentum: 0.9,
            dropout: 0.0,
            embedding_dim: 128,
            attention_heads: 8,
            history_len: 50,
            title_len: 30,
            negatives: 4,
            device_plan: DevicePlan::single(),
            tracking: TrackingConfig { sink: "file".to_string(), options: ConfigMap::new() },
            model_extras: ConfigMap::new(),
        }
    }

    pub fn family(&self) -> ModelFamily {
        self.model_extras
            .get("family")
            .and_then(ConfigValue::as_str)
            .and_then(ModelFamily::parse)
            .or_else(|| ModelFamily::from_model_name(&self.model_name))
            .unwrap_or(ModelFamily::Attention)
    }

    /// Message-passing depth of the graph model.
    pub fn gnn_hops(&self) -> usize {
        self.model_extras.get("hops").and_then(ConfigValue::as_i64).unwrap_or(DEFAULT_HOPS) as usize
    }

    /// Precomputed news embedding file of the embedding model.
    pub fn embedding_file(&self) -> Option<PathBuf> {
        self.model_extras.get("embedding_file").and_then(ConfigValue::as_str).map(PathBuf::from)
    }

    pub fn to_tree(&self) -> ConfigMap {
        let json = serde_json::to_value(self).expect("config serialises");
        match serde_json::from_value::<ConfigValue>(json).expect("config json is a tree") {
            ConfigValue::Map(m) => m,
            _ => unreachable!("config serialises to a map"),
        }
    }

    /// Stable hex digest of the serialized config.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn default_corpus_dir(dataset_name: &str) -> PathBuf {
    if dataset_name.is_empty() {
        PathBuf::from("data/corpus")
    } else {
        PathBuf::from("data").join(dataset_name).join("corpus")
    }
}

struct Checker<'a> {
    tree: &'a ConfigMap,
    violations: Vec<Violation>,
}

impl<'a> Checker<'a> {
    fn lookup(&self, key: &str) -> Option<&'a ConfigValue> {
        let mut parts = key.split('.');
        let mut node = self.tree.get(parts.next()?)?;
        for p in parts {
            node = node.as_map()?.get(p)?;
        }
        match node {
            ConfigValue::Null => None,
            v => Some(v),
        }
    }

    fn violate(&mut self, key: &str, value: impl fmt::Display, constraint: impl Into<String>) {
        self.violations.push(Violation { key: key.to_string(), value: value.to_string(), constraint: constraint.into() });
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        match self.lookup(key) {
            None => default.to_string(),
            Some(ConfigValue::Str(s)) => s.clone(),
            Some(other) => {
                self.violate(key, other, "must be a string");
                default.to_string()
            }
        }
    }

    fn non_empty(&mut self, key: &str, default: &str) -> String {
        let s = self.string(key, default);
        if s.trim().is_empty() {
            self.violate(key, "\"\"", "must be non-empty");
        }
        s
    }

    fn int(&mut self, key: &str, default: i64, min: i64) -> i64 {
        let v = match self.lookup(key) {
            None => default,
            Some(ConfigValue::Int(i)) => *i,
            Some(other) => {
                self.violate(key, other, "must be an integer");
                return default;
            }
        };
        if v < min {
            self.violate(key, v, format!("must be >= {min}"));
        }
        v
    }

    fn real(&mut self, key: &str, default: f64, ok: impl Fn(f64) -> bool, constraint: &str) -> f64 {
        let v = match self.lookup(key) {
            None => default,
            Some(v) => match v.as_f64() {
                Some(x) => x,
                None => {
                    self.violate(key, v, "must be a real number");
                    return default;
                }
            },
        };
        if !v.is_finite() || !ok(v) {
            self.violate(key, v, constraint);
        }
        v
    }
}

/// Checks every constraint in one pass and fills defaults.
///
/// All violations are collected before returning, so a learner sees every
/// problem at once.
pub fn validate_config(tree: &ConfigMap) -> Result<ExperimentConfig, ConfigError> {
    let tree = nest_unknown_keys(tree.clone());
    let mut c = Checker { tree: &tree, violations: Vec::new() };

    let model_name = c.non_empty("model_name", "");
    let dataset_name = c.non_empty("dataset_name", "");
    let d = ExperimentConfig::defaults(&model_name, &dataset_name);

    let corpus_dir = c.non_empty("corpus_dir", &d.corpus_dir.to_string_lossy());
    let output_dir = c.non_empty("output_dir", &d.output_dir.to_string_lossy());
    let seed = c.int("seed", d.seed as i64, 0);
    let epochs = c.int("epochs", d.epochs as i64, 1);
    let batch_size = c.int("batch_size", d.batch_size as i64, 1);
    let learning_rate = c.real("learning_rate", d.learning_rate, |x| x > 0.0, "must be a positive real");
    let momentum = c.real("momentum", d.momentum, |x| (0.0..1.0).contains(&x), "must be in [0, 1)");
    let dropout = c.real("dropout", d.dropout, |x| (0.0..1.0).contains(&x), "must be in [0, 1)");
    let embedding_dim = c.int("embedding_dim", d.embedding_dim as i64, 1);
    let attention_heads = c.int("attention_heads", d.attention_heads as i64, 1);
    let history_len = c.int("history_len", d.history_len as i64, 1);
    let title_len = c.int("title_len", d.title_len as i64, 1);
    let negatives = c.int("negatives", d.negatives as i64, 1);

    if embedding_dim >= 1 && attention_heads >= 1 && embedding_dim % attention_heads != 0 {
        c.violate(
            "embedding_dim",
            embedding_dim,
            format!("must be divisible by attention_heads ({attention_heads}) for multi-head attention"),
        );
    }

    let device_plan = match c.lookup("device_plan") {
        None => DevicePlan::single(),
        Some(ConfigValue::Str(s)) if s == "single" => DevicePlan::single(),
        Some(ConfigValue::Map(_)) => {
            let kind = c.string("device_plan.kind", "single");
            let n = c.int("device_plan.n_workers", 1, 1);
            match kind.as_str() {
                "single" => DevicePlan::single(),
                "simulated_data_parallel" => {
                    if n >= 1 && batch_size >= 1 && batch_size % n != 0 {
                        c.violate(
                            "batch_size",
                            batch_size,
                            format!("must be divisible by device_plan.n_workers ({n})"),
                        );
                    }
                    DevicePlan::data_parallel(n.max(1) as usize)
                }
                other => {
                    c.violate("device_plan.kind", other, "must be single or simulated_data_parallel");
                    DevicePlan::single()
                }
            }
        }
        Some(other) => {
            c.violate("device_plan", other, "must be `single` or a map with kind and n_workers");
            DevicePlan::single()
        }
    };

    let sink = c.string("tracking.sink", "file");
    if !matches!(sink.as_str(), "file" | "null") {
        c.violate("tracking.sink", &sink, "must be one of: file, null");
    }
    let tracking_options = match c.lookup("tracking.options") {
        None => ConfigMap::new(),
        Some(ConfigValue::Map(m)) => m.clone(),
        Some(other) => {
            c.violate("tracking.options", other, "must be a map");
            ConfigMap::new()
        }
    };

    let mut model_extras = match c.lookup("model_extras") {
        None => ConfigMap::new(),
        Some(ConfigValue::Map(m)) => m.clone(),
        Some(other) => {
            c.violate("model_extras", other, "must be a map");
            ConfigMap::new()
        }
    };
    let family = match model_extras.get("family") {
        Some(ConfigValue::Str(s)) => match ModelFamily::parse(s) {
            Some(f) => Some(f),
            None => {
                c.violate("model_extras.family", s, "must be one of: attention, graph, precomputed_embedding");
                None
            }
        },
        Some(other) => {
            c.violate("model_extras.family", other, "must be a string");
            None
        }
        None => match ModelFamily::from_model_name(&model_name) {
            Some(f) => Some(f),
            None if model_name.is_empty() => None,
            None => {
                c.violate("model_extras.family", "null", "required when the model name does not imply a family");
                None
            }
        },
    };
    if let Some(family) = family {
        model_extras.insert("family".into(), ConfigValue::Str(family.as_str().to_string()));
        match family {
            ModelFamily::Graph => {
                let hops = c.int("model_extras.hops", DEFAULT_HOPS, 1);
                if !(1..=2).contains(&hops) {
                    c.violate("model_extras.hops", hops, "must be 1 or 2");
                }
                model_extras.insert("hops".into(), ConfigValue::Int(hops));
            }
            ModelFamily::PrecomputedEmbedding => {
                let file = c.string("model_extras.embedding_file", "");
                if file.is_empty() {
                    c.violate("model_extras.embedding_file", "null", "required for the precomputed-embedding family");
                }
            }
            ModelFamily::Attention => {}
        }
    }

    if !c.violations.is_empty() {
        return Err(ConfigError::Invalid(c.violations));
    }
    Ok(ExperimentConfig {
        model_name,
        dataset_name,
        corpus_dir: PathBuf::from(corpus_dir),
        output_dir: PathBuf::from(output_dir),
        seed: seed as u64,
        epochs: epochs as usize,
        batch_size: batch_size as usize,
        learning_rate,
        momentum,
        dropout,
        embedding_dim: embedding_dim as usize,
        attention_heads: attention_heads as usize,
        history_len: history_len as usize,
        title_len: title_len as usize,
        negatives: negatives as usize,
        device_plan,
        tracking: TrackingConfig { sink, options: tracking_options },
        model_extras,
    })
}

/// Summary used by run listings.
pub fn summary(config: &ExperimentConfig) -> BTreeMap<String, String> {
    [
        ("model_name", config.model_name.clone()),
        ("dataset_name", config.dataset_name.clone()),
        ("family", config.family().as_str().to_string()),
        ("epochs", config.epochs.to_string()),
        ("batch_size", config.batch_size.to_string()),
        ("learning_rate", config.learning_rate.to_string()),
        ("seed", config.seed.to_string()),
        ("embedding_dim", config.embedding_dim.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}
