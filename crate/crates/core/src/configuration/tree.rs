//! Configuration trees and the YAML reader that builds them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use yaml_rust2::parser::{Event, MarkedEventReceiver, Parser};
use yaml_rust2::scanner::{Marker, TScalarStyle};

pub type ConfigMap = BTreeMap<String, ConfigValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigValue {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ConfigValue>),
    Map(ConfigMap),
}

impl ConfigValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            ConfigValue::Null => "null",
            ConfigValue::Bool(_) => "boolean",
            ConfigValue::Int(_) => "integer",
            ConfigValue::Float(_) => "real",
            ConfigValue::Str(_) => "string",
            ConfigValue::List(_) => "list",
            ConfigValue::Map(_) => "map",
        }
    }

    pub fn as_map(&self) -> Option<&ConfigMap> {
        match self {
            ConfigValue::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ConfigValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ConfigValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    /// Integers widen to reals.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ConfigValue::Int(i) => Some(*i as f64),
            ConfigValue::Float(f) => Some(*f),
            _ => None,
        }
    }

    /// Interprets a plain (unquoted) YAML scalar.
    pub fn from_plain_scalar(text: &str) -> ConfigValue {
        match text {
            "" | "~" | "null" | "Null" | "NULL" => return ConfigValue::Null,
            "true" | "True" | "TRUE" => return ConfigValue::Bool(true),
            "false" | "False" | "FALSE" => return ConfigValue::Bool(false),
            _ => {}
        }
        if let Ok(i) = text.parse::<i64>() {
            return ConfigValue::Int(i);
        }
        let looks_numeric = text.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.');
        if looks_numeric {
            if let Ok(f) = text.parse::<f64>() {
                return ConfigValue::Float(f);
            }
        }
        ConfigValue::Str(text.to_string())
    }
}

impl fmt::Display for ConfigValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigValue::Null => f.write_str("null"),
            ConfigValue::Bool(b) => write!(f, "{b}"),
            ConfigValue::Int(i) => write!(f, "{i}"),
            ConfigValue::Float(x) => write!(f, "{x}"),
            ConfigValue::Str(s) => f.write_str(s),
            ConfigValue::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
            ConfigValue::Map(m) => {
                f.write_str("{")?;
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// Problem found while reading YAML text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YamlError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Parsed document plus non-fatal findings (duplicate keys).
#[derive(Debug, Clone, PartialEq)]
pub struct YamlDocument {
    pub root: ConfigMap,
    pub warnings: Vec<String>,
}

enum Frame {
    Map { map: ConfigMap, key: Option<String> },
    Seq(Vec<ConfigValue>),
}

#[derive(Default)]
struct TreeBuilder {
    stack: Vec<Frame>,
    root: Option<ConfigValue>,
    warnings: Vec<String>,
    error: Option<YamlError>,
}

impl TreeBuilder {
    fn fail(&mut self, mark: Marker, message: impl Into<String>) {
        if self.error.is_none() {
            self.error = Some(YamlError { line: mark.line(), column: mark.col() + 1, message: message.into() });
        }
    }

    fn push_value(&mut self, value: ConfigValue, mark: Marker) {
        match self.stack.last_mut() {
            None => self.root = Some(value),
            Some(Frame::Seq(items)) => items.push(value),
            Some(Frame::Map { map, key }) => match key.take() {
                Some(k) => {
                    map.insert(k, value);
                }
                None => match value {
                    ConfigValue::Map(_) | ConfigValue::List(_) => self.fail(mark, "complex mapping keys are not supported"),
                    scalar => {
                        let k = match scalar {
                            ConfigValue::Str(s) => s,
                            other => other.to_string(),
                        };
                        if map.contains_key(&k) {
                            self.warnings.push(format!(
                                "line {}: duplicate key `{k}`, the last value wins",
                                mark.line()
                            ));
                        }
                        *key = Some(k);
                    }
                },
            },
        }
    }
}

impl MarkedEventReceiver for TreeBuilder {
    fn on_event(&mut self, ev: Event, mark: Marker) {
        if self.error.is_some() {
            return;
        }
        match ev {
            Event::Scalar(text, style, _, _) => {
                let value = match style {
                    TScalarStyle::Plain => ConfigValue::from_plain_scalar(&text),
                    _ => ConfigValue::Str(text),
                };
                self.push_value(value, mark);
            }
            Event::MappingStart(..) => self.stack.push(Frame::Map { map: ConfigMap::new(), key: None }),
            Event::SequenceStart(..) => self.stack.push(Frame::Seq(Vec::new())),
            Event::MappingEnd => {
                if let Some(Frame::Map { map, .. }) = self.stack.pop() {
                    self.push_value(ConfigValue::Map(map), mark);
                }
            }
            Event::SequenceEnd => {
                if let Some(Frame::Seq(items)) = self.stack.pop() {
                    self.push_value(ConfigValue::List(items), mark);
                }
            }
            Event::Alias(_) => self.fail(mark, "YAML aliases are not supported in configuration files"),
            _ => {}
        }
    }
}

/// Parses a YAML document whose root is a mapping (an empty document is an empty map).
pub fn parse_yaml(text: &str) -> Result<YamlDocument, YamlError> {
    let mut builder = TreeBuilder::default();
    let mut parser = Parser::new_from_str(text);
    parser.load(&mut builder, false).map_err(|e| YamlError {
        line: e.marker().line(),
        column: e.marker().col() + 1,
        message: e.info().to_string(),
    })?;
    if let Some(err) = builder.error {
        return Err(err);
    }
    let root = match builder.root {
        None | Some(ConfigValue::Null) => ConfigMap::new(),
        Some(ConfigValue::Map(m)) => m,
        Some(other) => {
            return Err(YamlError {
                line: 1,
                column: 1,
                message: format!("top level must be a mapping, found {}", other.type_name()),
            })
        }
    };
    Ok(YamlDocument { root, warnings: builder.warnings })
}

/// Parses the right-hand side of a `key=value` override.
pub fn parse_override_value(text: &str) -> ConfigValue {
    let trimmed = text.trim();
    if trimmed.starts_with('[') || trimmed.starts_with('{') {
        if let Ok(doc) = parse_yaml(&format!("v: {trimmed}")) {
            if let Some(v) = doc.root.get("v") {
                return v.clone();
            }
        }
    }
    ConfigValue::from_plain_scalar(trimmed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_document() {
        let doc = parse_yaml(
            "epochs: 5\nlearning_rate: 1e-3\nname: \"007\"\ntracking:\n  sink: file\n  options: {}\nlayers: [1, 2]\nempty:\n",
        )
        .unwrap();
        let r = &doc.root;
        assert_eq!(r["epochs"], ConfigValue::Int(5));
        assert_eq!(r["learning_rate"], ConfigValue::Float(1e-3));
        assert_eq!(r["name"], ConfigValue::Str("007".into()));
        assert_eq!(r["tracking"].as_map().unwrap()["sink"], ConfigValue::Str("file".into()));
        assert_eq!(r["layers"], ConfigValue::List(vec![ConfigValue::Int(1), ConfigValue::Int(2)]));
        assert_eq!(r["empty"], ConfigValue::Null);
        assert!(doc.warnings.is_empty());
    }

    #[test]
    fn duplicate_key_last_wins_with_warning() {
        let doc = parse_yaml("epochs: 1\nseed: 3\nepochs: 2\n").unwrap();
        assert_eq!(doc.root["epochs"], ConfigValue::Int(2));
        assert_eq!(doc.warnings.len(), 1);
        assert!(doc.warnings[0].contains("line 3"), "{:?}", doc.warnings);
    }

    #[test]
    fn syntax_error_has_line() {
        let err = parse_yaml("a: 1\nb: [1, 2\nc: 3\n").unwrap_err();
        assert!(err.line >= 2, "{err:?}");
    }

    #[test]
    fn root_must_be_map() {
        assert!(parse_yaml("- 1\n- 2\n").is_err());
        assert!(parse_yaml("").unwrap().root.is_empty());
    }

    #[test]
    fn override_values() {
        assert_eq!(parse_override_value("2"), ConfigValue::Int(2));
        assert_eq!(parse_override_value("two"), ConfigValue::Str("two".into()));
        assert_eq!(parse_override_value("[a, b]"), ConfigValue::List(vec![ConfigValue::Str("a".into()), ConfigValue::Str("b".into())]));
    }

    #[test]
    fn json_round_trip_keeps_types() {
        let v = ConfigValue::Map(
            [("a".to_string(), ConfigValue::Float(2.0)), ("b".to_string(), ConfigValue::Int(2))].into_iter().collect(),
        );
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<ConfigValue>(&text).unwrap(), v);
    }
}
