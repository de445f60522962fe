//! Two-layer online ad retrieval: layer 1 expands the raw query and
//! pre-click items into related query/item keys through Q2Q/Q2I/I2Q/I2I,
//! layer 2 maps the keys to ads through Q2A/I2A; candidates are merged by
//! max path score, deduplicated and ranked.

mod serve;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use serve::{serve, AdHit, ErrorResponse, Response, Server};

use crate::graph::NodeType;
use crate::index::{load_index, IndexError, IndexType, InvertedIndex};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("missing index {0:?}")]
    MissingIndex(IndexType),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RetrievalError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Request {
    pub query_id: String,
    #[serde(default)]
    pub preclick: Vec<String>,
    pub k: usize,
}

impl Request {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(RetrievalError::InvalidRequest("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// One hop in a retrieval path, for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub index: String,
    pub from: String,
    pub to: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTrace {
    pub hops: Vec<Hop>,
    pub path_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub ad_id: String,
    pub score: f64,
    pub provenance: Vec<PathTrace>,
}

/// How hop scores combine along a path. Merging across paths always keeps
/// the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathCombine {
    Product,
    Sum,
}

impl PathCombine {
    fn apply(self, path: f64, hop: f64) -> f64 {
        match self {
            PathCombine::Product => path * hop,
            PathCombine::Sum => path + hop,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Entries taken from each layer-1 index list per key.
    pub layer1_budget: usize,
    /// Entries taken from each layer-2 index list per key.
    pub layer2_budget: usize,
    pub combine: PathCombine,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { layer1_budget: 50, layer2_budget: 200, combine: PathCombine::Product }
    }
}

/// The six loaded indices.
pub struct IndexSet {
    indices: HashMap<IndexType, InvertedIndex>,
}

impl IndexSet {
    pub fn new(indices: Vec<InvertedIndex>) -> Self {
        IndexSet { indices: indices.into_iter().map(|i| (i.index_type, i)).collect() }
    }

    /// Load `<dir>/<label>.ndjson` for all six index types.
    pub fn load_dir(dir: &Path) -> Result<IndexSet> {
        let mut indices = HashMap::new();
        for t in IndexType::ALL {
            let path = dir.join(format!("{}.ndjson", t.label()));
            let idx = load_index(&path)?;
            if idx.index_type != t {
                return Err(RetrievalError::Index(IndexError::Parse(format!(
                    "{} holds a {:?} index",
                    path.display(),
                    idx.index_type
                ))));
            }
            indices.insert(t, idx);
        }
        Ok(IndexSet { indices })
    }

    pub fn get(&self, t: IndexType) -> Result<&InvertedIndex> {
        self.indices.get(&t).ok_or(RetrievalError::MissingIndex(t))
    }

    pub fn require_all(&self) -> Result<()> {
        for t in IndexType::ALL {
            self.get(t)?;
        }
        Ok(())
    }
}

/// An expanded layer-1 key with its best path so far.
#[derive(Debug, Clone)]
pub struct ExpandedKey {
    pub id: String,
    pub node_type: NodeType,
    pub path_score: f64,
    pub trace: Vec<Hop>,
}

/// Layer 1: the raw query and pre-click items survive as identity keys with
/// path score 1; Q2Q/Q2I expansions of the query and I2Q/I2I expansions of
/// each pre-click item join them. Duplicate keys keep their best score.
pub fn expand_layer1(
    req: &Request,
    indices: &IndexSet,
    cfg: &RetrievalConfig,
) -> Result<Vec<ExpandedKey>> {
    let mut best: HashMap<String, ExpandedKey> = HashMap::new();
    let mut offer = |key: ExpandedKey| match best.get_mut(&key.id) {
        Some(existing) if existing.path_score >= key.path_score => {}
        _ => {
            best.insert(key.id.clone(), key);
        }
    };

    offer(ExpandedKey {
        id: req.query_id.clone(),
        node_type: NodeType::Query,
        path_score: 1.0,
        trace: Vec::new(),
    });
    for p in &req.preclick {
        offer(ExpandedKey {
            id: p.clone(),
            node_type: NodeType::Item,
            path_score: 1.0,
            trace: Vec::new(),
        });
    }

    let expand = |from: &str, index_type: IndexType, offer: &mut dyn FnMut(ExpandedKey)| {
        if let Ok(idx) = indices.get(index_type) {
            if let Some(nbrs) = idx.lookup(from) {
                for (id, score) in nbrs.iter().take(cfg.layer1_budget) {
                    offer(ExpandedKey {
                        id: id.clone(),
                        node_type: index_type.candidate_type(),
                        path_score: *score,
                        trace: vec![Hop {
                            index: index_type.label().into(),
                            from: from.into(),
                            to: id.clone(),
                            score: *score,
                        }],
                    });
                }
            }
        }
    };
    {
        let mut offer_box = |k: ExpandedKey| offer(k);
        expand(&req.query_id, IndexType::Q2Q, &mut offer_box);
        expand(&req.query_id, IndexType::Q2I, &mut offer_box);
        for p in &req.preclick {
            expand(p, IndexType::I2Q, &mut offer_box);
            expand(p, IndexType::I2I, &mut offer_box);
        }
    }

    let mut keys: Vec<ExpandedKey> = best.into_values().collect();
    keys.sort_by(|a, b| b.path_score.total_cmp(&a.path_score).then_with(|| a.id.cmp(&b.id)));
    Ok(keys)
}

/// Layer 2: each key pulls its Q2A or I2A list; candidate score is the best
/// combined (path, hop) score over all contributing paths, which all stay
/// in the provenance.
pub fn retrieve_layer2(
    keys: &[ExpandedKey],
    indices: &IndexSet,
    cfg: &RetrievalConfig,
) -> Result<Vec<Candidate>> {
    let mut best: HashMap<String, Candidate> = HashMap::new();
    for key in keys {
        let index_type = match key.node_type {
            NodeType::Query => IndexType::Q2A,
            NodeType::Item => IndexType::I2A,
            NodeType::Ad => continue,
        };
        let Ok(idx) = indices.get(index_type) else { continue };
        let Some(nbrs) = idx.lookup(&key.id) else { continue };
        for (ad, hop_score) in nbrs.iter().take(cfg.layer2_budget) {
            let combined = cfg.combine.apply(key.path_score, *hop_score);
            let mut hops = key.trace.clone();
            hops.push(Hop {
                index: index_type.label().into(),
                from: key.id.clone(),
                to: ad.clone(),
                score: *hop_score,
            });
            let trace = PathTrace { hops, path_score: combined };
            match best.get_mut(ad) {
                Some(c) => {
                    c.score = c.score.max(combined);
                    c.provenance.push(trace);
                }
                None => {
                    best.insert(
                        ad.clone(),
                        Candidate { ad_id: ad.clone(), score: combined, provenance: vec![trace] },
                    );
                }
            }
        }
    }
    Ok(best.into_values().collect())
}

/// Full two-layer retrieval: expand, retrieve, rank (score descending, ad
/// id ascending), truncate to the request budget.
pub fn retrieve(req: &Request, indices: &IndexSet, cfg: &RetrievalConfig) -> Result<Vec<Candidate>> {
    req.validate()?;
    let keys = expand_layer1(req, indices, cfg)?;
    let mut candidates = retrieve_layer2(&keys, indices, cfg)?;
    candidates
        .sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.ad_id.cmp(&b.ad_id)));
    candidates.truncate(req.k);
    Ok(candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn idx(index_type: IndexType, entries: &[(&str, &[(&str, f64)])]) -> InvertedIndex {
        InvertedIndex {
            index_type,
            k: 50,
            entries: entries
                .iter()
                .map(|(k, nbrs)| {
                    (
                        k.to_string(),
                        nbrs.iter().map(|(id, s)| (id.to_string(), *s)).collect(),
                    )
                })
                .collect::<BTreeMap<_, _>>(),
        }
    }

    fn empty_set() -> IndexSet {
        IndexSet::new(IndexType::ALL.map(|t| idx(t, &[])).to_vec())
    }

    /// q1 →Q2Q→ q2(0.9); q1 →Q2A→ a1(0.8); q2 →Q2A→ a2(0.7), a1(0.5);
    /// i1 →I2A→ a1(0.6).
    fn fixture_set() -> IndexSet {
        IndexSet::new(vec![
            idx(IndexType::Q2Q, &[("q1", &[("q2", 0.9)])]),
            idx(IndexType::Q2I, &[]),
            idx(IndexType::I2Q, &[]),
            idx(IndexType::I2I, &[]),
            idx(IndexType::Q2A, &[("q1", &[("a1", 0.8)]), ("q2", &[("a2", 0.7), ("a1", 0.5)])]),
            idx(IndexType::I2A, &[("i1", &[("a1", 0.6)])]),
        ])
    }

    fn req(q: &str, preclick: &[&str], k: usize) -> Request {
        Request {
            query_id: q.into(),
            preclick: preclick.iter().map(|s| s.to_string()).collect(),
            k,
        }
    }

    #[test]
    fn identity_keys_survive_empty_indices() {
        let set = empty_set();
        let keys = expand_layer1(&req("q1", &[], 10), &set, &RetrievalConfig::default()).unwrap();
        assert_eq!(keys.len(), 1);
        assert_eq!(keys[0].id, "q1");
        assert_eq!(keys[0].path_score, 1.0);
    }

    #[test]
    fn expansion_adds_neighbors_and_keeps_max_on_duplicates() {
        let set = fixture_set();
        let keys = expand_layer1(
            &req("q1", &["i1"], 10),
            &set,
            &RetrievalConfig::default(),
        )
        .unwrap();
        let ids: Vec<&str> = keys.iter().map(|k| k.id.as_str()).collect();
        assert!(ids.contains(&"q1"));
        assert!(ids.contains(&"q2"));
        assert!(ids.contains(&"i1"));
        // Identity key q1 keeps score 1 even though expansions could reach it.
        let q1 = keys.iter().find(|k| k.id == "q1").unwrap();
        assert_eq!(q1.path_score, 1.0);
    }

    #[test]
    fn layer2_merges_by_max_and_accumulates_provenance() {
        let set = fixture_set();
        let cands = retrieve(&req("q1", &["i1"], 10), &set, &RetrievalConfig::default()).unwrap();
        // a1 reachable via q1 direct (1·0.8), q2 (0.9·0.5), i1 (1·0.6).
        let a1 = cands.iter().find(|c| c.ad_id == "a1").unwrap();
        assert!((a1.score - 0.8).abs() < 1e-12);
        assert_eq!(a1.provenance.len(), 3);
        // a2 via q2: 0.9·0.7.
        let a2 = cands.iter().find(|c| c.ad_id == "a2").unwrap();
        assert!((a2.score - 0.63).abs() < 1e-12);
        // Ranked by score descending.
        assert_eq!(cands[0].ad_id, "a1");
        // No duplicates.
        let mut ids: Vec<&str> = cands.iter().map(|c| c.ad_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), cands.len());
    }

    #[test]
    fn sum_combine_is_available() {
        let set = fixture_set();
        let cfg = RetrievalConfig { combine: PathCombine::Sum, ..Default::default() };
        let cands = retrieve(&req("q1", &[], 10), &set, &cfg).unwrap();
        let a2 = cands.iter().find(|c| c.ad_id == "a2").unwrap();
        assert!((a2.score - 1.6).abs() < 1e-12); // 0.9 + 0.7
    }

    #[test]
    fn k_truncates_and_zero_k_is_rejected() {
        let set = fixture_set();
        let cands = retrieve(&req("q1", &["i1"], 1), &set, &RetrievalConfig::default()).unwrap();
        assert_eq!(cands.len(), 1);
        assert!(matches!(
            retrieve(&req("q1", &[], 0), &set, &RetrievalConfig::default()),
            Err(RetrievalError::InvalidRequest(_))
        ));
    }

    #[test]
    fn missing_keys_are_skipped_silently() {
        let set = fixture_set();
        let cands =
            retrieve(&req("ghost", &["nothere"], 5), &set, &RetrievalConfig::default()).unwrap();
        assert!(cands.is_empty());
    }

    #[test]
    fn retrieval_is_deterministic() {
        let set = fixture_set();
        let a = retrieve(&req("q1", &["i1"], 10), &set, &RetrievalConfig::default()).unwrap();
        let b = retrieve(&req("q1", &["i1"], 10), &set, &RetrievalConfig::default()).unwrap();
        let sa = serde_json::to_string(&a).unwrap();
        let sb = serde_json::to_string(&b).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn raw_query_top_ad_always_reaches_the_candidate_pool() {
        // The identity key guarantees the query's own Q2A head entry is a
        // candidate before truncation.
        let set = fixture_set();
        let cands =
            retrieve(&req("q1", &[], 100), &set, &RetrievalConfig::default()).unwrap();
        assert!(cands.iter().any(|c| c.ad_id == "a1"));
    }

    #[test]
    fn budget_monotonicity_on_fixture() {
        let set = fixture_set();
        let small = RetrievalConfig { layer1_budget: 1, ..Default::default() };
        let large = RetrievalConfig { layer1_budget: 50, ..Default::default() };
        let r = req("q1", &["i1"], 10);
        let cs = retrieve(&r, &set, &small).unwrap();
        let cl = retrieve(&r, &set, &large).unwrap();
        let kth = cs.last().map(|c| c.score).unwrap_or(0.0);
        for c in &cs {
            if c.score >= kth {
                assert!(
                    cl.iter().any(|x| x.ad_id == c.ad_id),
                    "{} lost when budget grew",
                    c.ad_id
                );
            }
        }
    }
}
