//! Synthetic tree+cycle graph generation: queries form a category tree
//! linked by semantic edges (parent/child and siblings), items and ads sit
//! in ring-shaped co-click clusters, and leaf queries click into their
//! cluster. Held-out sessions become next-day evaluation edges.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalSet;
use crate::graph::{
    build_from_sessions, AliasTable, BidRecord, EdgeSpace, EdgeType, HeteroGraph, NodeRecord,
    NodeType, SessionClick, SessionLog, SessionQuery,
};
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Query tree branching factor.
    pub branching: usize,
    /// Tree depth (root at depth 0); leaves get one item/ad cluster each.
    pub depth: usize,
    pub items_per_cluster: usize,
    pub ads_per_cluster: usize,
    pub sessions_per_leaf: usize,
    pub clicks_per_session: usize,
    pub heldout_sessions_per_leaf: usize,
    /// Probability a session click jumps to a random foreign cluster.
    pub cross_noise: f64,
    /// Negatives sampled per held-out positive edge.
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// ~2k nodes: 364 queries, 243 clusters of 5 items + 2 ads.
    fn default() -> Self {
        SyntheticSpec {
            branching: 3,
            depth: 5,
            items_per_cluster: 5,
            ads_per_cluster: 2,
            sessions_per_leaf: 30,
            clicks_per_session: 3,
            heldout_sessions_per_leaf: 10,
            cross_noise: 0.05,
            negatives_per_positive: 10,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn query_count(&self) -> usize {
        (self.branching.pow(self.depth as u32 + 1) - 1) / (self.branching - 1)
    }

    pub fn leaf_count(&self) -> usize {
        self.branching.pow(self.depth as u32)
    }

    pub fn node_count(&self) -> usize {
        self.query_count() + self.leaf_count() * (self.items_per_cluster + self.ads_per_cluster)
    }
}

pub struct SyntheticData {
    pub catalog: Vec<NodeRecord>,
    pub sessions: Vec<SessionLog>,
    pub heldout_sessions: Vec<SessionLog>,
    pub bids: Vec<BidRecord>,
    pub graph: HeteroGraph,
    pub eval: EvalSet,
}

fn query_id(i: usize) -> String {
    format!("q{i:04}")
}

struct Tree {
    branching: usize,
    depth: usize,
}

impl Tree {
    fn parent(&self, i: usize) -> Option<usize> {
        (i > 0).then(|| (i - 1) / self.branching)
    }

    fn depth_of(&self, mut i: usize) -> usize {
        let mut d = 0;
        while i > 0 {
            i = (i - 1) / self.branching;
            d += 1;
        }
        d
    }

    /// Depth-1 ancestor, defining the category partition.
    fn category_of(&self, i: usize) -> String {
        if i == 0 {
            return "cat-root".into();
        }
        let mut cur = i;
        while self.depth_of(cur) > 1 {
            cur = self.parent(cur).unwrap();
        }
        format!("cat{cur}")
    }

    fn leaves(&self) -> Vec<usize> {
        let first = (self.branching.pow(self.depth as u32) - 1) / (self.branching - 1);
        let count = self.branching.pow(self.depth as u32);
        (first..first + count).collect()
    }
}

/// Generate the full desk-scale dataset. Deterministic: identical
/// parameters (including the seed) produce byte-identical graphs and eval
/// sets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> SyntheticData {
    assert!(spec.branching >= 2, "need a branching tree");
    assert!(spec.node_count() <= 10_000, "desk-scale cap is 10k nodes");
    assert!(spec.items_per_cluster >= 2);

    let tree = Tree { branching: spec.branching, depth: spec.depth };
    let n_q = spec.query_count();

    let mut catalog: Vec<NodeRecord> = Vec::new();
    for i in 0..n_q {
        let parent_token = match tree.parent(i) {
            Some(p) => format!("t{p}"),
            None => "t-root".into(),
        };
        catalog.push(NodeRecord {
            id: query_id(i),
            node_type: NodeType::Query,
            category: tree.category_of(i),
            terms: vec![parent_token, format!("t{i}")],
            brand: None,
            shop: None,
            bidding_words: Vec::new(),
        });
    }

    let leaves = tree.leaves();
    let mut bids: Vec<BidRecord> = Vec::new();
    let mut cluster_items: Vec<Vec<String>> = Vec::new();
    let mut cluster_ads: Vec<Vec<String>> = Vec::new();
    for (c, &leaf) in leaves.iter().enumerate() {
        let category = tree.category_of(leaf);
        let mut items = Vec::new();
        for j in 0..spec.items_per_cluster {
            let id = format!("i{c:03}x{j}");
            catalog.push(NodeRecord {
                id: id.clone(),
                node_type: NodeType::Item,
                category: category.clone(),
                terms: vec![format!("cl{c}"), format!("w{c}x{j}")],
                brand: Some(format!("brand{c}")),
                shop: Some(format!("shop{c}")),
                bidding_words: Vec::new(),
            });
            items.push(id);
        }
        let mut ads = Vec::new();
        for j in 0..spec.ads_per_cluster {
            let id = format!("a{c:03}x{j}");
            catalog.push(NodeRecord {
                id: id.clone(),
                node_type: NodeType::Ad,
                category: category.clone(),
                terms: vec![format!("cl{c}"), format!("wa{c}x{j}")],
                brand: Some(format!("brand{c}")),
                shop: Some(format!("shop{c}")),
                bidding_words: Vec::new(),
            });
            bids.push(BidRecord { ad_id: id.clone(), keywords: vec![format!("k{c}")] });
            ads.push(id);
        }
        cluster_items.push(items);
        cluster_ads.push(ads);
    }

    // Session generation: ring walks over the cluster with a popularity
    // skew, an ad appended every other session, occasional cross-cluster
    // noise clicks.
    let gen_sessions = |stream: &str, per_leaf: usize| -> Vec<SessionLog> {
        let mut sessions = Vec::new();
        for (c, &leaf) in leaves.iter().enumerate() {
            let weights: Vec<f64> =
                (0..spec.items_per_cluster).map(|j| (spec.items_per_cluster - j) as f64).collect();
            let popularity = AliasTable::new(&weights).expect("positive weights");
            let leaf_record = &catalog[leaf];
            for s in 0..per_leaf {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    spec.seed,
                    stream,
                    (c as u64) << 20 | s as u64,
                ));
                let start = popularity.sample(&mut rng);
                let n = spec.items_per_cluster;
                let mut clicks: Vec<SessionClick> = Vec::new();
                for step in 0..spec.clicks_per_session {
                    let mut cluster = c;
                    if rng.gen_bool(spec.cross_noise) {
                        cluster = rng.gen_range(0..leaves.len());
                    }
                    let j = (start + step) % n;
                    clicks.push(SessionClick {
                        id: cluster_items[cluster][j].clone(),
                        node_type: NodeType::Item,
                    });
                }
                if s % 2 == 0 && !cluster_ads[c].is_empty() {
                    let j = start % cluster_ads[c].len();
                    clicks.push(SessionClick {
                        id: cluster_ads[c][j].clone(),
                        node_type: NodeType::Ad,
                    });
                }
                sessions.push(SessionLog {
                    session_id: format!("{stream}-{c}-{s}"),
                    query: SessionQuery {
                        id: leaf_record.id.clone(),
                        terms: leaf_record.terms.clone(),
                        category: leaf_record.category.clone(),
                    },
                    clicks,
                });
            }
        }
        sessions
    };

    let sessions = gen_sessions("train", spec.sessions_per_leaf);
    let heldout_sessions = gen_sessions("next-day", spec.heldout_sessions_per_leaf);

    // Terms are {t<parent>, t<self>}, so parent/child and sibling pairs have
    // Jaccard 1/3 and everything else is below it.
    let (graph, report) = build_from_sessions(catalog.clone(), &sessions, &bids, 0.3);
    assert_eq!(report.rejected_clicks, 0, "synthetic sessions reference known nodes");

    let eval = build_eval_set(spec, &graph, &heldout_sessions);
    SyntheticData { catalog, sessions, heldout_sessions, bids, graph, eval }
}

fn build_eval_set(
    spec: &SyntheticSpec,
    graph: &HeteroGraph,
    heldout: &[SessionLog],
) -> EvalSet {
    let mut item_counts: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    let mut ad_counts: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for s in heldout {
        for c in &s.clicks {
            let per = match c.node_type {
                NodeType::Item => item_counts.entry(s.query.id.clone()).or_default(),
                NodeType::Ad => ad_counts.entry(s.query.id.clone()).or_default(),
                NodeType::Query => continue,
            };
            *per.entry(c.id.clone()).or_default() += 1;
        }
    }
    let rank = |m: BTreeMap<String, BTreeMap<String, u32>>| -> BTreeMap<String, Vec<(String, u32)>> {
        m.into_iter()
            .map(|(q, counts)| {
                let mut list: Vec<(String, u32)> = counts.into_iter().collect();
                list.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                (q, list)
            })
            .collect()
    };
    let item_truth = rank(item_counts);
    let ad_truth = rank(ad_counts);

    // Next-day positive edges, then sampled non-edge negatives per positive
    // (same query, same relation, disjoint from positives and train edges).
    let mut positives: Vec<(String, String, EdgeSpace)> = Vec::new();
    let mut pos_set: HashSet<(String, String)> = HashSet::new();
    for (truth, space) in
        [(&item_truth, EdgeSpace::QueryItem), (&ad_truth, EdgeSpace::QueryAd)]
    {
        for (q, list) in truth {
            for (target, _) in list {
                if pos_set.insert((q.clone(), target.clone())) {
                    positives.push((q.clone(), target.clone(), space));
                }
            }
        }
    }

    let mut negatives = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "eval-neg", 0));
    let mut neg_set: BTreeSet<(String, String)> = BTreeSet::new();
    for (q, _, space) in &positives {
        let qidx = graph.lookup(q).expect("held-out query exists in train graph");
        let target_type = match space {
            EdgeSpace::QueryItem => NodeType::Item,
            EdgeSpace::QueryAd => NodeType::Ad,
            _ => unreachable!(),
        };
        let population = graph.of_type(target_type);
        let clicked: HashSet<u32> =
            graph.neighbors(EdgeType::Click, qidx).iter().copied().collect();
        let mut drawn = 0;
        let mut attempts = 0;
        while drawn < spec.negatives_per_positive && attempts < 1000 {
            attempts += 1;
            let cand = population[rng.gen_range(0..population.len())];
            let cand_id = graph.id(cand).to_string();
            if clicked.contains(&cand)
                || pos_set.contains(&(q.clone(), cand_id.clone()))
                || neg_set.contains(&(q.clone(), cand_id.clone()))
            {
                continue;
            }
            neg_set.insert((q.clone(), cand_id.clone()));
            negatives.push((q.clone(), cand_id, *space));
            drawn += 1;
        }
    }

    EvalSet { item_truth, ad_truth, positives, negatives }
}
