//! Streaming narrative analysis over time-bucketed text embeddings.
//!
//! The pipeline ingests posts into two-sentence document units, embeds
//! them, clusters each timestep's batch into evolving story clusters,
//! ranks trending stories, grows analyst-seeded narrative clusters around a
//! moving narrative centroid, scores themes, and measures lagged
//! associations between contributing channels and narrative activity.

pub mod cluster;
pub mod embed;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod narrative;
pub mod pipeline;
pub mod service;
pub mod stats;
pub mod synth;
pub mod themes;
pub mod trend;
pub mod transport;
pub mod workspace;

pub use error::{Error, Result};
