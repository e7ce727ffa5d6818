//! Tabular data synthesis guided by a sparse feature dependency graph.
//!
//! Each feature is sampled conditioned only on its parents in an annotated
//! dependency graph, visiting features in topological order. Two conditional
//! samplers are provided: a training-free kernel density sampler over
//! fuzzy-matched rows ([`kde`]) and per-feature conditional normalizing flows
//! ([`flow`]). [`eval`] holds the privacy, fidelity, realism, and utility
//! metrics.

pub mod annotate;
pub mod graph;
pub mod table;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod flow;
pub mod kde;
pub mod rng;

pub use error::Error;
