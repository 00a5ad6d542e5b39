//! Phishing-account detection on directed temporal transaction graphs.
//!
//! Node embeddings come from an iterative loop: directed temporal
//! aggregation of neighbor embeddings, soft spherical K-means on the
//! aggregates, and a graph-Laplacian smoothing of the cluster similarity
//! signals. The [`evaluation`] module scores embeddings with a random forest.

pub mod aggregation;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod laplacian;
pub mod pipeline;
pub mod synthgen;

pub use error::{Error, Result};
