//! Heterogeneous query–item–ad graph: typed nodes with features, four
//! undirected edge types, category indexes and alias tables for sampling.

mod alias;
mod build;
mod io;
mod sample;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alias::AliasTable;
pub use build::{
    build_from_logs, build_from_sessions, BidRecord, BuildReport, GraphBuilder, SessionClick,
    SessionLog, SessionQuery,
};
pub use io::{load_graph, save_graph};
pub use sample::{
    extract_pairs, generate_samples, metapath_walk, sample_negatives, MetaPath, PositivePair,
    SampleConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Query,
    Item,
    Ad,
}

impl NodeType {
    pub const ALL: [NodeType; 3] = [NodeType::Query, NodeType::Item, NodeType::Ad];

    pub fn index(self) -> usize {
        match self {
            NodeType::Query => 0,
            NodeType::Item => 1,
            NodeType::Ad => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NodeType::Query => "query",
            NodeType::Item => "item",
            NodeType::Ad => "ad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeType {
    Click,
    CoClick,
    Semantic,
    CoBid,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] =
        [EdgeType::Click, EdgeType::CoClick, EdgeType::Semantic, EdgeType::CoBid];

    pub fn index(self) -> usize {
        match self {
            EdgeType::Click => 0,
            EdgeType::CoClick => 1,
            EdgeType::Semantic => 2,
            EdgeType::CoBid => 3,
        }
    }

    /// Endpoint rule for each edge type. Click joins a query with an item
    /// or ad; co-click joins clicked items/ads; semantic joins queries;
    /// co-bid joins ads.
    pub fn allows(self, a: NodeType, b: NodeType) -> bool {
        use NodeType::*;
        match self {
            EdgeType::Click => {
                matches!((a, b), (Query, Item) | (Item, Query) | (Query, Ad) | (Ad, Query))
            }
            EdgeType::CoClick => a != Query && b != Query,
            EdgeType::Semantic => a == Query && b == Query,
            EdgeType::CoBid => a == Ad && b == Ad,
        }
    }
}

/// Label of the edge space a node pair is scored in. The query–item space
/// is shared by both directions; the ad–ad (co-bid) space exists for
/// completeness of the relation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeSpace {
    #[serde(rename = "qq")]
    QueryQuery,
    #[serde(rename = "qi")]
    QueryItem,
    #[serde(rename = "ii")]
    ItemItem,
    #[serde(rename = "qa")]
    QueryAd,
    #[serde(rename = "ia")]
    ItemAd,
    #[serde(rename = "aa")]
    AdAd,
}

impl EdgeSpace {
    pub const ALL: [EdgeSpace; 6] = [
        EdgeSpace::QueryQuery,
        EdgeSpace::QueryItem,
        EdgeSpace::ItemItem,
        EdgeSpace::QueryAd,
        EdgeSpace::ItemAd,
        EdgeSpace::AdAd,
    ];

    pub fn index(self) -> usize {
        match self {
            EdgeSpace::QueryQuery => 0,
            EdgeSpace::QueryItem => 1,
            EdgeSpace::ItemItem => 2,
            EdgeSpace::QueryAd => 3,
            EdgeSpace::ItemAd => 4,
            EdgeSpace::AdAd => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EdgeSpace::QueryQuery => "qq",
            EdgeSpace::QueryItem => "qi",
            EdgeSpace::ItemItem => "ii",
            EdgeSpace::QueryAd => "qa",
            EdgeSpace::ItemAd => "ia",
            EdgeSpace::AdAd => "aa",
        }
    }

    pub fn for_pair(a: NodeType, b: NodeType) -> EdgeSpace {
        use NodeType::*;
        match (a, b) {
            (Query, Query) => EdgeSpace::QueryQuery,
            (Query, Item) | (Item, Query) => EdgeSpace::QueryItem,
            (Item, Item) => EdgeSpace::ItemItem,
            (Query, Ad) | (Ad, Query) => EdgeSpace::QueryAd,
            (Item, Ad) | (Ad, Item) => EdgeSpace::ItemAd,
            (Ad, Ad) => EdgeSpace::AdAd,
        }
    }

    /// Edge spaces a node of this type participates in.
    pub fn relevant_for(t: NodeType) -> &'static [EdgeSpace] {
        match t {
            NodeType::Query => {
                &[EdgeSpace::QueryQuery, EdgeSpace::QueryItem, EdgeSpace::QueryAd]
            }
            NodeType::Item => &[EdgeSpace::QueryItem, EdgeSpace::ItemItem, EdgeSpace::ItemAd],
            NodeType::Ad => &[EdgeSpace::QueryAd, EdgeSpace::ItemAd, EdgeSpace::AdAd],
        }
    }
}

/// A node with its raw features. `terms` holds query terms or item/ad title
/// terms; `bidding_words` is populated from the bids file for ads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub category: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shop: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bidding_words: Vec<String>,
}

/// One positive training sample: anchor, positive, K negatives and the edge
/// space the triple is scored in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub src: String,
    pub pos: String,
    pub negs: Vec<String>,
    pub relation: EdgeSpace,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown node id: {0}")]
    UnknownNode(String),
    #[error("node {id} has type {actual:?}, expected {expected:?}")]
    TypeMismatch { id: String, expected: NodeType, actual: NodeType },
    #[error("invalid meta-path: {0}")]
    InvalidMetaPath(String),
    #[error("graph has no nodes of type {0:?}")]
    NoNodesOfType(NodeType),
    #[error("alias table needs at least one positive weight")]
    EmptyWeights,
    #[error("cannot sample a negative distinct from the positive")]
    NoValidNegative,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Immutable heterogeneous graph. Nodes are stored sorted by id; adjacency
/// is symmetric, deduplicated and sorted, so rebuilding from the same input
/// yields byte-identical serializations.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    records: Vec<NodeRecord>,
    index: HashMap<String, u32>,
    /// adjacency[edge_type][node] -> sorted neighbor indexes
    adjacency: [Vec<Vec<u32>>; 4],
    /// union of all edge types, bucketed by neighbor node type
    typed_neighbors: Vec<[Vec<u32>; 3]>,
    by_type: [Vec<u32>; 3],
    categories: BTreeMap<(NodeType, String), Vec<u32>>,
    type_alias: [Option<AliasTable>; 3],
    category_alias: BTreeMap<(NodeType, String), AliasTable>,
}

impl HeteroGraph {
    pub(crate) fn from_parts(
        records: Vec<NodeRecord>,
        edges: &[(EdgeType, u32, u32)],
    ) -> HeteroGraph {
        let n = records.len();
        let mut index = HashMap::with_capacity(n);
        for (i, r) in records.iter().enumerate() {
            index.insert(r.id.clone(), i as u32);
        }
        let mut adjacency: [Vec<Vec<u32>>; 4] = std::array::from_fn(|_| vec![Vec::new(); n]);
        for &(etype, a, b) in edges {
            adjacency[etype.index()][a as usize].push(b);
            adjacency[etype.index()][b as usize].push(a);
        }
        for per_type in adjacency.iter_mut() {
            for nbrs in per_type.iter_mut() {
                nbrs.sort_unstable();
                nbrs.dedup();
            }
        }
        let mut typed_neighbors: Vec<[Vec<u32>; 3]> =
            (0..n).map(|_| std::array::from_fn(|_| Vec::new())).collect();
        for v in 0..n {
            let mut all: Vec<u32> = Vec::new();
            for per_type in adjacency.iter() {
                all.extend_from_slice(&per_type[v]);
            }
            all.sort_unstable();
            all.dedup();
            for u in all {
                typed_neighbors[v][records[u as usize].node_type.index()].push(u);
            }
        }
        let mut by_type: [Vec<u32>; 3] = std::array::from_fn(|_| Vec::new());
        let mut categories: BTreeMap<(NodeType, String), Vec<u32>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_type[r.node_type.index()].push(i as u32);
            categories.entry((r.node_type, r.category.clone())).or_default().push(i as u32);
        }
        let type_alias = std::array::from_fn(|t| {
            let count = by_type[t].len();
            (count > 0).then(|| AliasTable::new(&vec![1.0; count]).expect("uniform weights"))
        });
        let category_alias = categories
            .iter()
            .map(|(k, v)| {
                (k.clone(), AliasTable::new(&vec![1.0; v.len()]).expect("uniform weights"))
            })
            .collect();
        HeteroGraph {
            records,
            index,
            adjacency,
            typed_neighbors,
            by_type,
            categories,
            type_alias,
            category_alias,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn node(&self, idx: u32) -> &NodeRecord {
        &self.records[idx as usize]
    }

    pub fn node_type(&self, idx: u32) -> NodeType {
        self.records[idx as usize].node_type
    }

    pub fn id(&self, idx: u32) -> &str {
        &self.records[idx as usize].id
    }

    pub fn lookup(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (u32, &NodeRecord)> {
        self.records.iter().enumerate().map(|(i, r)| (i as u32, r))
    }

    pub fn of_type(&self, t: NodeType) -> &[u32] {
        &self.by_type[t.index()]
    }

    pub fn neighbors(&self, etype: EdgeType, idx: u32) -> &[u32] {
        &self.adjacency[etype.index()][idx as usize]
    }

    /// Neighbors of `idx` (union over edge types) having node type `t`.
    pub fn neighbors_of_type(&self, idx: u32, t: NodeType) -> &[u32] {
        &self.typed_neighbors[idx as usize][t.index()]
    }

    pub fn category_bucket(&self, t: NodeType, category: &str) -> &[u32] {
        self.categories
            .get(&(t, category.to_string()))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub(crate) fn type_alias(&self, t: NodeType) -> Option<&AliasTable> {
        self.type_alias[t.index()].as_ref()
    }

    pub(crate) fn category_alias(&self, t: NodeType, category: &str) -> Option<&AliasTable> {
        self.category_alias.get(&(t, category.to_string()))
    }

    /// All edges in canonical order (etype index, then src id, then dst id;
    /// each undirected edge listed once with src < dst by node index order).
    pub fn edges(&self) -> Vec<(EdgeType, u32, u32)> {
        let mut out = Vec::new();
        for etype in EdgeType::ALL {
            for (v, nbrs) in self.adjacency[etype.index()].iter().enumerate() {
                for &u in nbrs {
                    if (v as u32) < u {
                        out.push((etype, v as u32, u));
                    }
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|per| per.iter().map(|n| n.len()).sum::<usize>()).sum::<usize>()
            / 2
    }
}

/// |a ∩ b| / |a ∪ b| over token sets; 0 when both sides are empty.
pub fn jaccard(a: &HashSet<&str>, b: &HashSet<&str>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}
