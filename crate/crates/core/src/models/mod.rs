//! Neural layers, the click graph, precomputed embeddings and the three
//! reference models.
//!
//! | model family | news encoder | user encoder |
//! |---|---|---|
//! | attention (`nrms_like`) | embed, self-attention, pool | self-attention, pool over history |
//! | graph (`gnn_like`) | shared with attention | user-id embedding plus 1-2 hops of mean aggregation |
//! | precomputed embedding (`llm_like`) | table lookup, linear projection | self-attention, pool over history |
//!
//! All three score candidates with a dot product and train on softmax
//! cross-entropy over one positive and K negatives.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub mod embeddings;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod params;

pub use embeddings::{load_precomputed_embeddings, CoverageReport, EmbeddingTable};
pub use graph::{aggregate_neighbors, build_click_graph, ClickGraph, Node};
pub use layers::{AdditiveAttentionPool, Embedding, Linear, MultiHeadSelfAttention, NeighborAggregator};
pub use loss::{score_candidates, softmax_cross_entropy, training_loss};
pub use matrix::DenseMatrix;
pub use model::{BatchGradients, Mode, ModelInputs, ModelSpec, NewsRecModel, Weights};
pub use params::Parameterized;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("index {index} out of range for a table of {size} rows")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("{context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Config(String),
    #[error("unknown news id `{0}`")]
    UnknownNews(String),
    #[error("no embedding for graph node {0}")]
    UnknownNode(String),
    #[error("parameter `{0}` is missing")]
    MissingParameter(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParameter(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: (usize, usize), found: (usize, usize) },
    #[error("{}: row {row}: {message}", path.display())]
    EmbeddingFile { path: PathBuf, row: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}
