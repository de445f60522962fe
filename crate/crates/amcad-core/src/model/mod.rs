//! The adaptive mixed-curvature representation model: a node-level encoder
//! (inductive feature embedding, graph convolution, space fusion) and an
//! edge-level scorer (edge-space projection, attentive subspace-distance
//! combination) over a product of M learned-curvature subspaces.

mod forward;
mod params;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forward::{
    attention_weights_e, edge_project_e, embed_features_e, encode_e, fermi_dirac_e,
    gcn_aggregate_e, gcn_update_e, pair_score_e, project_all_e, score_distance_e, space_fusion_e,
    ProductEmb,
};
pub use params::{
    field_tokens, field_widths, fields_for, FeatureField, FeatureRow, FeatureTable,
    FeatureTableKey, ModelParams, ParamKey, Tensor,
};

use crate::autodiff::EvalEngine;
use crate::geometry::{Curvature, GeometryError};
use crate::graph::{EdgeSpace, HeteroGraph, NodeType};

use crate::linalg::sigmoid;
use crate::util::derive_seed;

/// A point embedding: one vector per subspace, part m valid under that
/// subspace's curvature.
pub type ProductEmbedding = ProductEmb<Vec<f64>>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// How curvatures are initialized and whether they train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureMode {
    /// Trainable; subspace m starts at −1, +1, −1, … to break symmetry.
    Adaptive,
    /// All curvatures pinned to 0: the Euclidean ablation.
    ZeroPinned,
    /// Pinned to the given per-subspace values (fixed product space).
    FixedPinned(Vec<f64>),
}

impl CurvatureMode {
    /// Starting curvature for subspace `m`, with its trainability.
    pub fn curvature(&self, m: usize) -> Curvature {
        let value = match self {
            CurvatureMode::Adaptive => {
                if m % 2 == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
            CurvatureMode::ZeroPinned => 0.0,
            CurvatureMode::FixedPinned(v) => v[m % v.len()],
        };
        Curvature { value, trainable: self.trainable() }
    }

    pub fn initial(&self, m: usize) -> f64 {
        self.curvature(m).value
    }

    pub fn trainable(&self) -> bool {
        matches!(self, CurvatureMode::Adaptive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    /// Number of subspaces M.
    pub subspaces: usize,
    /// Dimension d of each subspace.
    pub dim: usize,
    /// Graph-convolution rounds L.
    pub layers: usize,
    /// Sampled neighbors per neighbor type.
    pub fanout: usize,
    /// Hash buckets per feature table.
    pub buckets: u32,
    pub nonlinearity: Nonlinearity,
    pub curvature_mode: CurvatureMode,
}

impl SpaceConfig {
    /// Desk-scale default: M=2, d=8 (total 16).
    pub fn desk() -> Self {
        SpaceConfig {
            subspaces: 2,
            dim: 8,
            layers: 1,
            fanout: 5,
            buckets: 1 << 18,
            nonlinearity: Nonlinearity::Relu,
            curvature_mode: CurvatureMode::Adaptive,
        }
    }

    /// Production scale: total dimension 120 over two subspaces.
    pub fn production_scale() -> Self {
        SpaceConfig { dim: 60, ..SpaceConfig::desk() }
    }

    pub fn total_dim(&self) -> usize {
        self.subspaces * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.subspaces < 1 {
            return Err(ModelError::Shape("need at least one subspace".into()));
        }
        if self.dim < 6 {
            return Err(ModelError::Shape(
                "subspace dimension must cover the widest feature set (6 fields)".into(),
            ));
        }
        if self.buckets == 0 {
            return Err(ModelError::Shape("bucket count must be positive".into()));
        }
        if let CurvatureMode::FixedPinned(v) = &self.curvature_mode {
            if v.is_empty() {
                return Err(ModelError::Shape("fixed curvature list is empty".into()));
            }
        }
        Ok(())
    }
}

/// A sampled neighborhood tree: the node plus, per neighbor type, sampled
/// neighbor contexts one level shallower.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeContext {
    pub node: u32,
    pub neighbors: [Vec<NodeContext>; 3],
}

impl NodeContext {
    pub fn leaf(node: u32) -> Self {
        NodeContext { node, neighbors: std::array::from_fn(|_| Vec::new()) }
    }

    pub fn depth(&self) -> usize {
        1 + self
            .neighbors
            .iter()
            .flat_map(|v| v.iter())
            .map(|c| c.depth())
            .max()
            .unwrap_or(0)
    }
}

/// Sample a depth-`depth` context for `node`: up to `fanout` neighbors per
/// neighbor type, chosen without replacement. Deterministic in
/// (seed, node, depth) regardless of call order.
pub fn sample_context(
    g: &HeteroGraph,
    node: u32,
    depth: usize,
    fanout: usize,
    seed: u64,
) -> NodeContext {
    if depth == 0 {
        return NodeContext::leaf(node);
    }
    let mut neighbors: [Vec<NodeContext>; 3] = std::array::from_fn(|_| Vec::new());
    for t in NodeType::ALL {
        let pool = g.neighbors_of_type(node, t);
        let chosen: Vec<u32> = if pool.len() <= fanout {
            pool.to_vec()
        } else {
            let stream = ((node as u64) << 16) ^ ((depth as u64) << 8) ^ t.index() as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ctx", stream));
            let mut picked: Vec<u32> =
                pool.choose_multiple(&mut rng, fanout).copied().collect();
            picked.sort_unstable();
            picked
        };
        neighbors[t.index()] = chosen
            .into_iter()
            .map(|n| sample_context(g, n, depth - 1, fanout, seed))
            .collect();
    }
    NodeContext { node, neighbors }
}

/// Encode one node through feature embedding, L convolution rounds and
/// space fusion (plain `f64` path).
pub fn encode(params: &ModelParams, g: &HeteroGraph, ctx: &NodeContext) -> Result<ProductEmbedding> {
    let mut e = EvalEngine::new();
    encode_e(&mut e, params, g, ctx)
}

/// Project every subspace part of a node embedding into edge space `r`.
pub fn edge_project_all(
    params: &ModelParams,
    emb: &ProductEmbedding,
    t: NodeType,
    r: EdgeSpace,
) -> Result<ProductEmbedding> {
    let mut e = EvalEngine::new();
    project_all_e(&mut e, params, emb, t, r)
}

/// Node-level subspace attention weights over projected parts.
pub fn attention_weights(
    params: &ModelParams,
    projected: &ProductEmbedding,
    t: NodeType,
) -> Result<Vec<f64>> {
    let mut e = EvalEngine::new();
    attention_weights_e(&mut e, params, projected, t)
}

/// Geodesic distance of one subspace pair inside edge space `r` (inputs
/// must already be edge-projected into κ^{m,r}).
pub fn subspace_distance(
    params: &ModelParams,
    px: &[f64],
    py: &[f64],
    m: u8,
    r: EdgeSpace,
) -> Result<f64> {
    Ok(crate::geometry::geodesic_distance(px, py, params.kappa_edge(m, r))?)
}

/// Attentive product-space distance between two node embeddings under edge
/// space `r` (projects both sides, then combines subspace distances with
/// pair weights w′(x)+w′(y)).
pub fn score_distance(
    params: &ModelParams,
    x: &ProductEmbedding,
    t1: NodeType,
    y: &ProductEmbedding,
    t2: NodeType,
    r: EdgeSpace,
) -> Result<f64> {
    let mut e = EvalEngine::new();
    let s = pair_score_e(&mut e, params, x, t1, y, t2, r)?;
    Ok(s[0])
}

/// Fermi-Dirac decoder: σ(t·(r − dist)), strictly decreasing in dist.
pub fn fermi_dirac_sim(dist: f64, radius: f64, temperature: f64) -> f64 {
    sigmoid(temperature * (radius - dist))
}
