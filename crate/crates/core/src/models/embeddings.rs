//! Precomputed news embeddings read from `news_id<TAB>v1 v2 ... v_d` text files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    pub source: String,
    vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub found: usize,
    pub total: usize,
    pub coverage: f64,
    pub missing: Vec<String>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, source: impl Into<String>) -> Self {
        Self { dim, source: source.into(), vectors: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<(), ModelError> {
        if vector.len() != self.dim {
            return Err(ModelError::DimensionMismatch { context: "embedding vector", expected: self.dim, found: vector.len() });
        }
        self.vectors.insert(id.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    /// The stored vector, or zeros for an unknown id.
    pub fn vector_or_zero(&self, id: &str) -> Vec<f64> {
        self.get(id).map_or_else(|| vec![0.0; self.dim], <[f64]>::to_vec)
    }

    pub fn coverage<'a, I: IntoIterator<Item = &'a String>>(&self, ids: I) -> CoverageReport {
        let mut found = 0;
        let mut missing = Vec::new();
        for id in ids {
            if self.vectors.contains_key(id) {
                found += 1;
            } else {
                missing.push(id.clone());
            }
        }
        let total = found + missing.len();
        let coverage = if total == 0 { 1.0 } else { found as f64 / total as f64 };
        CoverageReport { found, total, coverage, missing }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io_err = |e| ModelError::Io { path: path.to_path_buf(), source: e };
        let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
        for (id, v) in &self.vectors {
            let values: Vec<String> = v.iter().map(f64::to_string).collect();
            writeln!(out, "{id}\t{}", values.join(" ")).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

pub fn load_precomputed_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingTable, ModelError> {
    let text = fs::read_to_string(path).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })?;
    let bad = |row: usize, message: String| ModelError::EmbeddingFile { path: path.to_path_buf(), row, message };
    let mut table: Option<EmbeddingTable> = expected_dim.map(|d| EmbeddingTable::new(d, "precomputed"));
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, values) = line.split_once('\t').ok_or_else(|| bad(row, "expected news_id<TAB>values".into()))?;
        let vector = values
            .split_whitespace()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad(row, format!("`{v}` is not a finite number"))))
            .collect::<Result<Vec<_>, _>>()?;
        let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len(), "precomputed"));
        if vector.len() != t.dim {
            return Err(bad(row, format!("expected {} values, found {}", t.dim, vector.len())));
        }
        if t.vectors.contains_key(id) {
            return Err(bad(row, format!("duplicate news id `{id}`")));
        }
        t.vectors.insert(id.to_string(), vector);
    }
    table.ok_or_else(|| bad(0, "file is empty and no dimension was given".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_and_zero_fill() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        fs::write(&path, "N1\t1 0\nN2\t0 1\nN3\t0.5 0.5\n").unwrap();
        let t = load_precomputed_embeddings(&path, Some(2)).unwrap();
        let ids: Vec<String> = ["N1", "N2", "N3", "N4"].iter().map(|s| s.to_string()).collect();
        let report = t.coverage(&ids);
        assert_eq!(report.coverage, 0.75);
        assert_eq!(report.missing, vec!["N4".to_string()]);
        assert_eq!(t.vector_or_zero("N4"), vec![0.0, 0.0]);
    }

    #[test]
    fn wrong_dimension_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        fs::write(&path, "N1\t1 0\nN2\t0 1 2\n").unwrap();
        match load_precomputed_embeddings(&path, None) {
            Err(ModelError::EmbeddingFile { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "N1\t1 0\n").unwrap();
        assert!(matches!(load_precomputed_embeddings(&path, Some(3)), Err(ModelError::EmbeddingFile { row: 1, .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        let mut t = EmbeddingTable::new(3, "precomputed");
        t.insert("a", vec![0.1, -2.5e-7, 3.0]).unwrap();
        t.insert("b", vec![1.0 / 3.0, 0.0, -0.0]).unwrap();
        t.save(&path).unwrap();
        assert_eq!(load_precomputed_embeddings(&path, Some(3)).unwrap(), t);
    }
}
