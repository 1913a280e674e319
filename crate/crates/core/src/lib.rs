//! Neural news recommendation toolkit.
//!
//! The crate is organised along the pipeline a learner walks through:
//!
//! * [`corpus`] downloads raw datasets and normalises them into a
//!   [`corpus::UnifiedCorpus`] that every model consumes.
//! * [`configuration`] resolves per-model YAML files, dataset overlays and
//!   command-line overrides into a validated [`configuration::ExperimentConfig`].
//! * [`models`] holds the neural layers (with hand-written backward passes)
//!   and the three reference model families.
//! * [`metrics`] implements AUC, MRR and nDCG@k over impressions.
//! * [`runner`] trains, validates and tests models, writes checkpoints and
//!   reports progress through a pluggable tracking sink.

pub mod configuration;
pub mod corpus;
pub mod metrics;
pub mod models;
pub mod runner;

pub use configuration::ExperimentConfig;
pub use corpus::UnifiedCorpus;
pub use metrics::EvalResult;
