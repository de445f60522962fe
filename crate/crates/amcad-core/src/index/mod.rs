//! Exact mixed-curvature nearest-neighbor computation and the six typed
//! inverted indices (Q2Q, Q2I, I2Q, I2I, Q2A, I2A). The store holds, per
//! node and relevant edge space, the M edge-projected vectors and the M
//! precomputed attention weights; queries are exhaustive and exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry;
use crate::graph::{EdgeSpace, HeteroGraph, NodeType};
use crate::model::{
    attention_weights, edge_project_all, encode, fermi_dirac_sim, sample_context, ModelError,
    ModelParams,
};
use crate::tensorio::{read_archive, write_archive, ArchiveTensor, TensorIoError};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("key not present in store: {0}")]
    UnknownKey(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    TensorIo(#[from] TensorIoError),
}

pub type Result<T> = std::result::Result<T, IndexError>;

/// The six inverted-index types powering two-layer retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexType {
    Q2Q,
    Q2I,
    I2Q,
    I2I,
    Q2A,
    I2A,
}

impl IndexType {
    pub const ALL: [IndexType; 6] = [
        IndexType::Q2Q,
        IndexType::Q2I,
        IndexType::I2Q,
        IndexType::I2I,
        IndexType::Q2A,
        IndexType::I2A,
    ];

    /// Layer-1 indices expand the request; layer-2 indices map keys to ads.
    pub fn is_layer1(self) -> bool {
        matches!(self, IndexType::Q2Q | IndexType::Q2I | IndexType::I2Q | IndexType::I2I)
    }

    pub fn key_type(self) -> NodeType {
        match self {
            IndexType::Q2Q | IndexType::Q2I | IndexType::Q2A => NodeType::Query,
            IndexType::I2Q | IndexType::I2I | IndexType::I2A => NodeType::Item,
        }
    }

    pub fn candidate_type(self) -> NodeType {
        match self {
            IndexType::Q2Q | IndexType::I2Q => NodeType::Query,
            IndexType::Q2I | IndexType::I2I => NodeType::Item,
            IndexType::Q2A | IndexType::I2A => NodeType::Ad,
        }
    }

    pub fn edge_space(self) -> EdgeSpace {
        match self {
            IndexType::Q2Q => EdgeSpace::QueryQuery,
            IndexType::Q2I | IndexType::I2Q => EdgeSpace::QueryItem,
            IndexType::I2I => EdgeSpace::ItemItem,
            IndexType::Q2A => EdgeSpace::QueryAd,
            IndexType::I2A => EdgeSpace::ItemAd,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            IndexType::Q2Q => "q2q",
            IndexType::Q2I => "q2i",
            IndexType::I2Q => "i2q",
            IndexType::I2I => "i2i",
            IndexType::Q2A => "q2a",
            IndexType::I2A => "i2a",
        }
    }

    pub fn from_label(s: &str) -> Option<IndexType> {
        IndexType::ALL.into_iter().find(|t| t.label() == s)
    }
}

/// Per-node entry: edge-projected vectors and attention weights for every
/// edge space the node participates in.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub node_type: NodeType,
    pub category: String,
    /// edge space → (M projected vectors, M attention weights)
    pub spaces: BTreeMap<EdgeSpace, (Vec<Vec<f64>>, Vec<f64>)>,
}

/// All precomputed state needed for MNN queries, independent of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub subspaces: usize,
    pub dim: usize,
    pub fd_radius: f64,
    pub fd_temperature: f64,
    /// (subspace, edge space) → curvature of that edge space
    pub edge_kappas: BTreeMap<(u8, EdgeSpace), f64>,
    entries: BTreeMap<String, StoreEntry>,
}

impl EmbeddingStore {
    pub fn new(
        subspaces: usize,
        dim: usize,
        fd_radius: f64,
        fd_temperature: f64,
        edge_kappas: BTreeMap<(u8, EdgeSpace), f64>,
    ) -> Self {
        EmbeddingStore {
            subspaces,
            dim,
            fd_radius,
            fd_temperature,
            edge_kappas,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: String, entry: StoreEntry) {
        self.entries.insert(id, entry);
    }

    pub fn get(&self, id: &str) -> Option<&StoreEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids_of_type(&self, t: NodeType) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, e)| e.node_type == t)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Attentive product-space distance between two stored nodes under `r`.
    pub fn pair_distance(&self, a: &StoreEntry, b: &StoreEntry, r: EdgeSpace) -> f64 {
        let (pa, wa) = &a.spaces[&r];
        let (pb, wb) = &b.spaces[&r];
        let mut total = 0.0;
        for m in 0..self.subspaces {
            let kappa = self.edge_kappas[&(m as u8, r)];
            let d = geometry::geodesic_distance(&pa[m], &pb[m], kappa)
                .expect("stored vectors are in-domain");
            total += (wa[m] + wb[m]) * d;
        }
        total
    }
}

/// Encode every node once, project per relevant edge space and precompute
/// attention weights. Deterministic given params and the context seed.
pub fn precompute_store(
    params: &ModelParams,
    graph: &HeteroGraph,
    context_seed: u64,
    fd_radius: f64,
    fd_temperature: f64,
) -> Result<EmbeddingStore> {
    let mut edge_kappas = BTreeMap::new();
    for m in 0..params.space.subspaces as u8 {
        for r in EdgeSpace::ALL {
            edge_kappas.insert((m, r), params.kappa_edge(m, r));
        }
    }
    let store_shell = EmbeddingStore::new(
        params.space.subspaces,
        params.space.dim,
        fd_radius,
        fd_temperature,
        edge_kappas,
    );

    let ids: Vec<u32> = graph.nodes().map(|(i, _)| i).collect();
    let computed: Vec<(String, StoreEntry)> = ids
        .par_iter()
        .map(|&idx| -> Result<(String, StoreEntry)> {
            let record = graph.node(idx);
            let t = record.node_type;
            let ctx =
                sample_context(graph, idx, params.space.layers, params.space.fanout, context_seed);
            let emb = encode(params, graph, &ctx)?;
            let mut spaces = BTreeMap::new();
            for &r in EdgeSpace::relevant_for(t) {
                let projected = edge_project_all(params, &emb, t, r)?;
                let weights = attention_weights(params, &projected, t)?;
                spaces.insert(r, (projected.parts, weights));
            }
            Ok((
                record.id.clone(),
                StoreEntry { node_type: t, category: record.category.clone(), spaces },
            ))
        })
        .collect::<Result<_>>()?;

    let mut store = store_shell;
    for (id, entry) in computed {
        store.insert(id, entry);
    }
    Ok(store)
}

/// Exact top-K by ascending attentive distance over all candidates of the
/// index's candidate type (optionally restricted to the key's category).
/// Scores are stored as Fermi-Dirac similarities; ties break by id.
pub fn knn_exact(
    store: &EmbeddingStore,
    key: &str,
    index_type: IndexType,
    k: usize,
    category_filter: bool,
) -> Result<Vec<(String, f64)>> {
    let key_entry = store.get(key).ok_or_else(|| IndexError::UnknownKey(key.to_string()))?;
    let r = index_type.edge_space();
    let cand_type = index_type.candidate_type();
    let mut scored: Vec<(f64, &str)> = store
        .entries
        .iter()
        .filter(|(id, e)| {
            e.node_type == cand_type
                && id.as_str() != key
                && (!category_filter || e.category == key_entry.category)
        })
        .map(|(id, e)| (store.pair_distance(key_entry, e, r), id.as_str()))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(dist, id)| {
            (id.to_string(), fermi_dirac_sim(dist, store.fd_radius, store.fd_temperature))
        })
        .collect())
}

/// One typed key → top-K neighbor map.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub index_type: IndexType,
    pub k: usize,
    pub entries: BTreeMap<String, Vec<(String, f64)>>,
}

impl InvertedIndex {
    pub fn lookup(&self, key: &str) -> Option<&[(String, f64)]> {
        self.entries.get(key).map(|v| v.as_slice())
    }
}

/// Build one index: exact top-K for every key of the key type, data-parallel
/// over keys. Output is independent of the worker count.
pub fn build_index(
    store: &EmbeddingStore,
    index_type: IndexType,
    k: usize,
    category_filter: bool,
) -> Result<InvertedIndex> {
    let keys = store.ids_of_type(index_type.key_type());
    let entries: Vec<(String, Vec<(String, f64)>)> = keys
        .par_iter()
        .map(|key| {
            knn_exact(store, key, index_type, k, category_filter)
                .map(|nbrs| (key.to_string(), nbrs))
        })
        .collect::<Result<_>>()?;
    Ok(InvertedIndex { index_type, k, entries: entries.into_iter().collect() })
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    #[serde(rename = "type")]
    index_type: IndexType,
    #[serde(rename = "K")]
    k: usize,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexLine {
    key: String,
    nbrs: Vec<(String, f64)>,
}

/// Header line then one line per key; serde_json's shortest-round-trip
/// float formatting preserves scores exactly.
pub fn save_index(idx: &InvertedIndex, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let header =
        IndexHeader { index_type: idx.index_type, k: idx.k, count: idx.entries.len() };
    serde_json::to_writer(&mut w, &header).map_err(|e| IndexError::Parse(e.to_string()))?;
    w.write_all(b"\n")?;
    for (key, nbrs) in &idx.entries {
        let line = IndexLine { key: key.clone(), nbrs: nbrs.clone() };
        serde_json::to_writer(&mut w, &line).map_err(|e| IndexError::Parse(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<InvertedIndex> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let header: IndexHeader = match lines.next() {
        Some((_, Ok(line))) => serde_json::from_str(&line)
            .map_err(|e| IndexError::Parse(format!("line 1: {e}")))?,
        _ => return Err(IndexError::Parse("empty index file".into())),
    };
    let mut entries = BTreeMap::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: IndexLine = serde_json::from_str(&line)
            .map_err(|e| IndexError::Parse(format!("line {}: {e}", i + 1)))?;
        entries.insert(parsed.key, parsed.nbrs);
    }
    if entries.len() != header.count {
        return Err(IndexError::Parse(format!(
            "header claims {} entries, found {}",
            header.count,
            entries.len()
        )));
    }
    Ok(InvertedIndex { index_type: header.index_type, k: header.k, entries })
}

/// Store archive: flat vectors per (edge space, subspace, node) plus an
/// attention-weights table, with node metadata in the header.
pub fn save_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let mut meta: BTreeMap<String, (String, String)> = BTreeMap::new();
    let mut tensors: BTreeMap<String, ArchiveTensor> = BTreeMap::new();
    for (id, entry) in &store.entries {
        meta.insert(id.clone(), (entry.node_type.label().into(), entry.category.clone()));
        for (r, (parts, weights)) in &entry.spaces {
            for (m, part) in parts.iter().enumerate() {
                tensors.insert(
                    format!("v/{}/{m}/{id}", r.label()),
                    ArchiveTensor { shape: vec![part.len()], data: part.clone() },
                );
            }
            tensors.insert(
                format!("w/{}/{id}", r.label()),
                ArchiveTensor { shape: vec![weights.len()], data: weights.clone() },
            );
        }
    }
    let kappas: Vec<(u8, String, f64)> = store
        .edge_kappas
        .iter()
        .map(|(&(m, r), &v)| (m, r.label().to_string(), v))
        .collect();
    let header = serde_json::json!({
        "kind": "amcad-store",
        "subspaces": store.subspaces,
        "dim": store.dim,
        "fd_radius": store.fd_radius,
        "fd_temperature": store.fd_temperature,
        "edge_kappas": kappas,
        "nodes": meta,
    });
    write_archive(path, &header, &tensors)?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<EmbeddingStore> {
    let (header, tensors) = read_archive(path)?;
    if header.get("kind").and_then(|v| v.as_str()) != Some("amcad-store") {
        return Err(IndexError::Parse("not a store archive".into()));
    }
    let subspaces = header["subspaces"].as_u64().unwrap_or(0) as usize;
    let dim = header["dim"].as_u64().unwrap_or(0) as usize;
    let fd_radius = header["fd_radius"].as_f64().unwrap_or(1.0);
    let fd_temperature = header["fd_temperature"].as_f64().unwrap_or(5.0);
    let kappas: Vec<(u8, String, f64)> =
        serde_json::from_value(header["edge_kappas"].clone())
            .map_err(|e| IndexError::Parse(e.to_string()))?;
    let mut edge_kappas = BTreeMap::new();
    for (m, label, v) in kappas {
        let r = EdgeSpace::ALL
            .into_iter()
            .find(|r| r.label() == label)
            .ok_or_else(|| IndexError::Parse(format!("unknown edge space {label}")))?;
        edge_kappas.insert((m, r), v);
    }
    let meta: BTreeMap<String, (String, String)> =
        serde_json::from_value(header["nodes"].clone())
            .map_err(|e| IndexError::Parse(e.to_string()))?;

    let mut store =
        EmbeddingStore::new(subspaces, dim, fd_radius, fd_temperature, edge_kappas);
    for (id, (type_label, category)) in meta {
        let node_type = match type_label.as_str() {
            "query" => NodeType::Query,
            "item" => NodeType::Item,
            "ad" => NodeType::Ad,
            other => return Err(IndexError::Parse(format!("unknown node type {other}"))),
        };
        let mut spaces = BTreeMap::new();
        for &r in EdgeSpace::relevant_for(node_type) {
            let weights = tensors
                .get(&format!("w/{}/{id}", r.label()))
                .ok_or_else(|| IndexError::Parse(format!("missing weights for {id}")))?
                .data
                .clone();
            let mut parts = Vec::with_capacity(subspaces);
            for m in 0..subspaces {
                let part = tensors
                    .get(&format!("v/{}/{m}/{id}", r.label()))
                    .ok_or_else(|| IndexError::Parse(format!("missing vector for {id}")))?
                    .data
                    .clone();
                parts.push(part);
            }
            spaces.insert(r, (parts, weights));
        }
        store.insert(id, StoreEntry { node_type, category, spaces });
    }
    Ok(store)
}
