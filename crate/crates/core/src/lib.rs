//! Batch curation of raw video corpora into captioned, filtered and
//! budget-selected training sets.
//!
//! The library exposes every stage on its own (metrics, filters,
//! acceleration, selection) plus a [`pipeline::Pipeline`] that chains them
//! over an NDJSON manifest.

pub mod accelerate;
pub mod config;
pub mod filters;
pub mod media;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scorer;
pub mod selection;

pub use config::PipelineConfig;
pub use model::{parse_manifest, write_manifest, VideoRecord};
pub use pipeline::{Pipeline, PipelineError, RunOutput};
