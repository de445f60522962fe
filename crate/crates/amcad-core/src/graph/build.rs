//! Graph construction from behavior logs, a node catalog and a bids file.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{jaccard, EdgeType, GraphError, HeteroGraph, NodeRecord, NodeType};
use crate::util::read_ndjson;

/// One behavior-log line: a searched query and the ordered clicks under it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionLog {
    pub session_id: String,
    pub query: SessionQuery,
    pub clicks: Vec<SessionClick>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionQuery {
    pub id: String,
    #[serde(default)]
    pub terms: Vec<String>,
    pub category: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionClick {
    pub id: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BidRecord {
    pub ad_id: String,
    pub keywords: Vec<String>,
}

/// Counters reported after a build.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub sessions: usize,
    pub rejected_clicks: usize,
    pub rejected_bids: usize,
}

pub struct GraphBuilder {
    records: BTreeMap<String, NodeRecord>,
    edges: BTreeSet<(EdgeType, String, String)>,
    report: BuildReport,
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            records: BTreeMap::new(),
            edges: BTreeSet::new(),
            report: BuildReport::default(),
        }
    }

    pub fn add_node(&mut self, record: NodeRecord) {
        self.records.entry(record.id.clone()).or_insert(record);
    }

    fn insert_edge(&mut self, etype: EdgeType, a: &str, b: &str) {
        if a == b {
            return;
        }
        let (x, y) = if a < b { (a, b) } else { (b, a) };
        self.edges.insert((etype, x.to_string(), y.to_string()));
    }

    /// Typed edge insertion for callers that construct graphs directly
    /// (synthetic generators, tests). Unknown endpoints or endpoint-rule
    /// violations are rejected.
    pub fn add_edge(&mut self, etype: EdgeType, a: &str, b: &str) -> Result<(), GraphError> {
        let ta = self.records.get(a).ok_or_else(|| GraphError::UnknownNode(a.into()))?.node_type;
        let tb = self.records.get(b).ok_or_else(|| GraphError::UnknownNode(b.into()))?.node_type;
        if !etype.allows(ta, tb) {
            return Err(GraphError::TypeMismatch { id: b.into(), expected: ta, actual: tb });
        }
        self.insert_edge(etype, a, b);
        Ok(())
    }

    /// Ingest one session: a clicking edge from the query to every clicked
    /// node and a co-clicking edge between adjacent clicked items/ads.
    /// Clicks referencing unknown ids are rejected and counted.
    pub fn add_session(&mut self, session: &SessionLog) {
        self.report.sessions += 1;
        let qid = session.query.id.clone();
        self.records.entry(qid.clone()).or_insert_with(|| NodeRecord {
            id: qid.clone(),
            node_type: NodeType::Query,
            category: session.query.category.clone(),
            terms: session.query.terms.clone(),
            brand: None,
            shop: None,
            bidding_words: Vec::new(),
        });
        let mut accepted: Vec<String> = Vec::new();
        for click in &session.clicks {
            if click.node_type == NodeType::Query {
                self.report.rejected_clicks += 1;
                continue;
            }
            match self.records.get(&click.id) {
                Some(r) if r.node_type == click.node_type => accepted.push(click.id.clone()),
                _ => self.report.rejected_clicks += 1,
            }
        }
        for id in &accepted {
            self.insert_edge(EdgeType::Click, &qid, id);
        }
        for pair in accepted.windows(2) {
            self.insert_edge(EdgeType::CoClick, &pair[0], &pair[1]);
        }
    }

    /// Attach bidding keywords to an ad. Unknown or non-ad ids are rejected.
    pub fn add_bid(&mut self, bid: &BidRecord) {
        match self.records.get_mut(&bid.ad_id) {
            Some(r) if r.node_type == NodeType::Ad => {
                let mut words: BTreeSet<String> =
                    r.bidding_words.iter().cloned().collect();
                words.extend(bid.keywords.iter().cloned());
                r.bidding_words = words.into_iter().collect();
            }
            _ => self.report.rejected_bids += 1,
        }
    }

    /// Derive semantic (query term Jaccard ≥ threshold) and co-bid (shared
    /// keyword) edges, then freeze into an immutable graph.
    pub fn finish(mut self, jaccard_threshold: f64) -> (HeteroGraph, BuildReport) {
        self.derive_semantic_edges(jaccard_threshold);
        self.derive_cobid_edges();

        let records: Vec<NodeRecord> = self.records.into_values().collect();
        let mut index: HashMap<&str, u32> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            index.insert(r.id.as_str(), i as u32);
        }
        let edges: Vec<(EdgeType, u32, u32)> = self
            .edges
            .iter()
            .map(|(etype, a, b)| (*etype, index[a.as_str()], index[b.as_str()]))
            .collect();
        (HeteroGraph::from_parts(records, &edges), self.report)
    }

    fn derive_semantic_edges(&mut self, threshold: f64) {
        // Only query pairs sharing at least one term can clear a positive
        // threshold, so prefilter through a term → queries map.
        let mut by_term: HashMap<&str, Vec<&str>> = HashMap::new();
        let mut term_sets: HashMap<&str, HashSet<&str>> = HashMap::new();
        for r in self.records.values() {
            if r.node_type != NodeType::Query {
                continue;
            }
            let set: HashSet<&str> = r.terms.iter().map(|s| s.as_str()).collect();
            for t in &set {
                by_term.entry(t).or_default().push(r.id.as_str());
            }
            term_sets.insert(r.id.as_str(), set);
        }
        let mut new_edges: Vec<(String, String)> = Vec::new();
        let mut seen: HashSet<(&str, &str)> = HashSet::new();
        for ids in by_term.values() {
            for i in 0..ids.len() {
                for j in (i + 1)..ids.len() {
                    let (a, b) = if ids[i] < ids[j] { (ids[i], ids[j]) } else { (ids[j], ids[i]) };
                    if !seen.insert((a, b)) {
                        continue;
                    }
                    if jaccard(&term_sets[a], &term_sets[b]) >= threshold {
                        new_edges.push((a.to_string(), b.to_string()));
                    }
                }
            }
        }
        for (a, b) in new_edges {
            self.insert_edge(EdgeType::Semantic, &a, &b);
        }
    }

    fn derive_cobid_edges(&mut self) {
        let mut by_keyword: HashMap<&str, Vec<&str>> = HashMap::new();
        for r in self.records.values() {
            if r.node_type != NodeType::Ad {
                continue;
            }
            for k in &r.bidding_words {
                by_keyword.entry(k.as_str()).or_default().push(r.id.as_str());
            }
        }
        let mut new_edges: Vec<(String, String)> = Vec::new();
        for ads in by_keyword.values() {
            for i in 0..ads.len() {
                for j in (i + 1)..ads.len() {
                    new_edges.push((ads[i].to_string(), ads[j].to_string()));
                }
            }
        }
        for (a, b) in new_edges {
            self.insert_edge(EdgeType::CoBid, &a, &b);
        }
    }
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

/// Build a graph from in-memory pieces.
pub fn build_from_sessions(
    catalog: Vec<NodeRecord>,
    sessions: &[SessionLog],
    bids: &[BidRecord],
    jaccard_threshold: f64,
) -> (HeteroGraph, BuildReport) {
    let mut b = GraphBuilder::new();
    for r in catalog {
        b.add_node(r);
    }
    for bid in bids {
        b.add_bid(bid);
    }
    for s in sessions {
        b.add_session(s);
    }
    b.finish(jaccard_threshold)
}

/// Build a graph from newline-delimited JSON files: a node catalog, a
/// behavior log (one session per line) and a bids file. Malformed lines
/// surface as parse errors carrying the line number.
pub fn build_from_logs(
    logs: &Path,
    catalog: &Path,
    bids: Option<&Path>,
    jaccard_threshold: f64,
) -> Result<(HeteroGraph, BuildReport), GraphError> {
    let mut b = GraphBuilder::new();
    read_ndjson::<NodeRecord, _>(catalog, |_, r| {
        b.add_node(r);
        Ok(())
    })?
    .map_err(GraphError::Parse)?;
    if let Some(bids) = bids {
        read_ndjson::<BidRecord, _>(bids, |_, bid| {
            b.add_bid(&bid);
            Ok(())
        })?
        .map_err(GraphError::Parse)?;
    }
    read_ndjson::<SessionLog, _>(logs, |_, s| {
        b.add_session(&s);
        Ok(())
    })?
    .map_err(GraphError::Parse)?;
    Ok(b.finish(jaccard_threshold))
}
