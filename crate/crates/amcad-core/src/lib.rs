//! Adaptive mixed-curvature graph embeddings for sponsored-search ad retrieval.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`graph`] — build a heterogeneous query–item–ad graph from behavior
//!    logs and sample training pairs via meta-path random walks.
//! 2. [`geometry`] — closed-form operations of the unified κ-stereographic
//!    model, valid for any real curvature κ.
//! 3. [`model`] — the node encoder and edge scorer in products of
//!    learned-curvature spaces, generic over a plain or recording engine.
//! 4. [`train`] — reverse-mode gradients, AdaGrad with clipping/warm-up,
//!    gradient verification, checkpoints, LRU feature eviction.
//! 5. [`index`] — exact mixed-curvature nearest-neighbor computation and
//!    the six inverted indices.
//! 6. [`retrieval`] — the two-layer online ad-retrieval engine (CLI batch
//!    mode and a line-protocol TCP service).
//! 7. [`eval`] — Next AUC / Hitrate@K / nDCG@K metrics, synthetic
//!    tree+cycle graphs, and the experiment harness.

pub mod autodiff;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod index;
pub mod linalg;
pub mod model;
pub mod retrieval;
pub mod tensorio;
pub mod train;
pub mod util;

pub use geometry::Curvature;
pub use graph::{EdgeType, HeteroGraph, NodeRecord, NodeType, TrainingSample};
pub use graph::EdgeSpace;
pub use model::{ModelParams, ProductEmbedding, SpaceConfig};
