//! The model forward pass, generic over an [`Engine`]: the same code path
//! produces plain embeddings for inference and a gradient tape for training.

use super::params::{field_tokens, fields_for, ModelParams, ParamKey};
use super::{ModelError, NodeContext, Nonlinearity, Result};
use crate::autodiff::curved::{
    activation_stable_e, exp0_stable_e, geodesic_distance_e, log0_e, mobius_matvec_stable_e,
};
use crate::autodiff::Engine;
use crate::graph::{EdgeSpace, HeteroGraph, NodeRecord, NodeType};

/// One vector per subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductEmb<V> {
    pub parts: Vec<V>,
}

impl<V> ProductEmb<V> {
    pub fn new(parts: Vec<V>) -> Self {
        ProductEmb { parts }
    }

    pub fn subspaces(&self) -> usize {
        self.parts.len()
    }
}

fn kappa_node_v<E: Engine<Key = ParamKey>>(e: &mut E, params: &ModelParams, m: u8, t: NodeType) -> E::Val {
    let key = ParamKey::NodeKappa { m, t };
    let trainable = params.trainable(&key);
    let data = params.value(&key).into_owned();
    e.param(key, &data, trainable)
}

fn kappa_edge_v<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    m: u8,
    r: EdgeSpace,
) -> E::Val {
    let key = ParamKey::EdgeKappa { m, r };
    let trainable = params.trainable(&key);
    let data = params.value(&key).into_owned();
    e.param(key, &data, trainable)
}

fn dense_v<E: Engine<Key = ParamKey>>(e: &mut E, params: &ModelParams, key: ParamKey) -> E::Val {
    let data = params.value(&key).into_owned();
    e.param(key, &data, true)
}

fn use_relu(params: &ModelParams) -> bool {
    params.space.nonlinearity == Nonlinearity::Relu
}

/// Feature embedding (inductive input layer): per subspace, look up each
/// feature field (multi-valued fields mean-pooled), concatenate the fields
/// into a d-vector and map through exp at the origin under κ^{m,t}.
pub fn embed_features_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    record: &NodeRecord,
) -> Result<ProductEmb<E::Val>> {
    let t = record.node_type;
    let fields = fields_for(t);
    let mut parts = Vec::with_capacity(params.space.subspaces);
    for m in 0..params.space.subspaces as u8 {
        let mut field_vecs = Vec::with_capacity(fields.len());
        for &field in fields {
            let table = params.feature_table(t, field, m);
            let tokens = field_tokens(record, field);
            if tokens.is_empty() {
                field_vecs.push(e.zeros(table.width));
                continue;
            }
            let rows: Vec<E::Val> = tokens
                .iter()
                .map(|tok| {
                    let bucket = params.bucket_for(t, field, tok);
                    let key = ParamKey::FeatureRow { t, field, m, bucket };
                    let data = table.row(bucket).into_owned();
                    e.param(key, &data, true)
                })
                .collect();
            field_vecs.push(if rows.len() == 1 { rows[0].clone() } else { e.mean(&rows) });
        }
        let u = e.concat(&field_vecs);
        let kappa = kappa_node_v(e, params, m, t);
        parts.push(exp0_stable_e(e, &u, &kappa)?);
    }
    Ok(ProductEmb::new(parts))
}

/// Message passing for one subspace: per neighbor type the mean of the
/// neighbors' origin logs (under the neighbor type's curvature), then the
/// self state's log, concatenated. Empty neighbor types contribute a zero
/// block. Output width (|T|+1)·d.
pub fn gcn_aggregate_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    self_state: &E::Val,
    neighbor_states: &[Vec<E::Val>; 3],
    m: u8,
    t: NodeType,
) -> Result<E::Val> {
    let d = params.space.dim;
    let mut blocks = Vec::with_capacity(NodeType::ALL.len() + 1);
    for nt in NodeType::ALL {
        let states = &neighbor_states[nt.index()];
        if states.is_empty() {
            blocks.push(e.zeros(d));
            continue;
        }
        let kappa = kappa_node_v(e, params, m, nt);
        let logs: Vec<E::Val> = states
            .iter()
            .map(|s| log0_e(e, s, &kappa))
            .collect::<std::result::Result<_, _>>()?;
        blocks.push(e.mean(&logs));
    }
    let kappa = kappa_node_v(e, params, m, t);
    blocks.push(log0_e(e, self_state, &kappa)?);
    Ok(e.concat(&blocks))
}

/// Layer update: exp the aggregated tangent back to the manifold, apply the
/// layer matrix with ⊗_κ and the κ-preserving nonlinearity.
pub fn gcn_update_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    agg: &E::Val,
    m: u8,
    t: NodeType,
    l: u8,
) -> Result<E::Val> {
    let d = params.space.dim;
    let width = (NodeType::ALL.len() + 1) * d;
    if e.val(agg).len() != width {
        return Err(ModelError::Shape(format!(
            "gcn_update expects width {width}, got {}",
            e.val(agg).len()
        )));
    }
    let kappa = kappa_node_v(e, params, m, t);
    let p = exp0_stable_e(e, agg, &kappa)?;
    let w = dense_v(e, params, ParamKey::LayerW { m, t, l });
    let z = mobius_matvec_stable_e(e, &w, d, width, &p, &kappa)?;
    Ok(activation_stable_e(e, &z, &kappa, &kappa, use_relu(params))?)
}

/// Space fusion: pool all subspace logs into a global tangent vector, then
/// refresh each part from [global ‖ own log] through W₁ and exp.
pub fn space_fusion_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    emb: &ProductEmb<E::Val>,
    t: NodeType,
) -> Result<ProductEmb<E::Val>> {
    let d = params.space.dim;
    let kappas: Vec<E::Val> =
        (0..emb.subspaces() as u8).map(|m| kappa_node_v(e, params, m, t)).collect();
    let logs: Vec<E::Val> = emb
        .parts
        .iter()
        .zip(&kappas)
        .map(|(x, k)| log0_e(e, x, k))
        .collect::<std::result::Result<_, _>>()?;
    let pooled = e.mean(&logs);
    let mut parts = Vec::with_capacity(emb.subspaces());
    for m in 0..emb.subspaces() {
        let cat = e.concat(&[pooled.clone(), logs[m].clone()]);
        let w = dense_v(e, params, ParamKey::FusionW { m: m as u8, t });
        let z = e.matvec(&w, d, 2 * d, &cat);
        parts.push(exp0_stable_e(e, &z, &kappas[m])?);
    }
    Ok(ProductEmb::new(parts))
}

/// Representation of a context node after `layer` convolution rounds.
fn representation_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    g: &HeteroGraph,
    ctx: &NodeContext,
    layer: usize,
) -> Result<ProductEmb<E::Val>> {
    if layer == 0 {
        return embed_features_e(e, params, g.node(ctx.node));
    }
    let t = g.node_type(ctx.node);
    let self_rep = representation_e(e, params, g, ctx, layer - 1)?;
    let mut child_reps: [Vec<ProductEmb<E::Val>>; 3] = std::array::from_fn(|_| Vec::new());
    for nt in NodeType::ALL {
        for child in &ctx.neighbors[nt.index()] {
            child_reps[nt.index()].push(representation_e(e, params, g, child, layer - 1)?);
        }
    }
    let mut parts = Vec::with_capacity(params.space.subspaces);
    for m in 0..params.space.subspaces as u8 {
        let neighbor_states: [Vec<E::Val>; 3] = std::array::from_fn(|i| {
            child_reps[i].iter().map(|r| r.parts[m as usize].clone()).collect()
        });
        let agg = gcn_aggregate_e(
            e,
            params,
            &self_rep.parts[m as usize],
            &neighbor_states,
            m,
            t,
        )?;
        parts.push(gcn_update_e(e, params, &agg, m, t, layer as u8)?);
    }
    Ok(ProductEmb::new(parts))
}

/// Full node encoding: feature embedding, L convolution rounds over the
/// sampled context, space fusion once at the end.
pub fn encode_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    g: &HeteroGraph,
    ctx: &NodeContext,
) -> Result<ProductEmb<E::Val>> {
    let rep = representation_e(e, params, g, ctx, params.space.layers)?;
    space_fusion_e(e, params, &rep, g.node_type(ctx.node))
}

/// Project one subspace part into edge space `r`:
/// σ^{κ^{m,t}→κ^{m,r}}(W₂^{m,t} ⊗_{κ^{m,t}} part).
pub fn edge_project_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    part: &E::Val,
    m: u8,
    t: NodeType,
    r: EdgeSpace,
) -> Result<E::Val> {
    let d = params.space.dim;
    if e.val(part).len() != d {
        return Err(ModelError::Shape(format!(
            "edge_project expects width {d}, got {}",
            e.val(part).len()
        )));
    }
    let kt = kappa_node_v(e, params, m, t);
    let kr = kappa_edge_v(e, params, m, r);
    let w = dense_v(e, params, ParamKey::ProjW { m, t });
    let z = mobius_matvec_stable_e(e, &w, d, d, part, &kt)?;
    Ok(activation_stable_e(e, &z, &kt, &kr, use_relu(params))?)
}

pub fn project_all_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    emb: &ProductEmb<E::Val>,
    t: NodeType,
    r: EdgeSpace,
) -> Result<ProductEmb<E::Val>> {
    let parts = emb
        .parts
        .iter()
        .enumerate()
        .map(|(m, p)| edge_project_e(e, params, p, m as u8, t, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProductEmb::new(parts))
}

/// Node-level subspace attention: softmax(W^t·[proj₁‖…‖proj_M]), length M.
pub fn attention_weights_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    projected: &ProductEmb<E::Val>,
    t: NodeType,
) -> Result<E::Val> {
    let m_count = params.space.subspaces;
    let d = params.space.dim;
    let cat = e.concat(&projected.parts);
    if e.val(&cat).len() != m_count * d {
        return Err(ModelError::Shape(format!(
            "attention expects width {}, got {}",
            m_count * d,
            e.val(&cat).len()
        )));
    }
    let w = dense_v(e, params, ParamKey::AttnW { t });
    let logits = e.matvec(&w, m_count, m_count * d, &cat);
    Ok(e.softmax(&logits))
}

/// Weighted product-space distance from projected parts and per-node
/// attention weights: Σ_m (w′_m(x)+w′_m(y))·d_{κ^{m,r}}(px_m, py_m).
pub fn score_distance_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    px: &ProductEmb<E::Val>,
    wx: &E::Val,
    py: &ProductEmb<E::Val>,
    wy: &E::Val,
    r: EdgeSpace,
) -> Result<E::Val> {
    let pair_w = e.add(wx, wy);
    let dists: Vec<E::Val> = (0..px.subspaces())
        .map(|m| {
            let kappa = kappa_edge_v(e, params, m as u8, r);
            geodesic_distance_e(e, &px.parts[m], &py.parts[m], &kappa)
        })
        .collect::<std::result::Result<_, _>>()?;
    let dvec = e.concat(&dists);
    Ok(e.dot(&pair_w, &dvec))
}

/// Full edge-level score between two unprojected node embeddings.
pub fn pair_score_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    x: &ProductEmb<E::Val>,
    t1: NodeType,
    y: &ProductEmb<E::Val>,
    t2: NodeType,
    r: EdgeSpace,
) -> Result<E::Val> {
    let px = project_all_e(e, params, x, t1, r)?;
    let py = project_all_e(e, params, y, t2, r)?;
    let wx = attention_weights_e(e, params, &px, t1)?;
    let wy = attention_weights_e(e, params, &py, t2)?;
    score_distance_e(e, params, &px, &wx, &py, &wy, r)
}

/// Fermi-Dirac decoder on an engine value.
pub fn fermi_dirac_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    dist: &E::Val,
    radius: f64,
    temperature: f64,
) -> E::Val {
    let r = e.scalar(radius);
    let diff = e.sub(&r, dist);
    let t = e.scalar(temperature);
    let z = e.mul(&t, &diff);
    e.sigmoid(&z)
}
