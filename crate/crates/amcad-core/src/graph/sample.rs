//! Meta-path guided random walks, positive-pair extraction and
//! category-aware negative sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EdgeSpace, EdgeType, GraphError, HeteroGraph, NodeType, TrainingSample};
use crate::util::derive_seed;

/// A typed walk pattern: a start node type followed by (edge type, node
/// type) steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPath {
    pub start: NodeType,
    pub steps: Vec<(EdgeType, NodeType)>,
}

impl MetaPath {
    pub fn new(start: NodeType, steps: Vec<(EdgeType, NodeType)>) -> Result<Self, GraphError> {
        let path = MetaPath { start, steps };
        path.validate()?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let mut prev = self.start;
        for (etype, next) in &self.steps {
            if !etype.allows(prev, *next) {
                return Err(GraphError::InvalidMetaPath(format!(
                    "{etype:?} cannot join {prev:?} and {next:?}"
                )));
            }
            prev = *next;
        }
        Ok(())
    }

    /// The six walk patterns used for sample generation. Query–query hops
    /// travel over semantic edges (co-click is only defined between
    /// clicked items/ads, so there is no query co-click edge to follow).
    pub fn standard_paths() -> Vec<MetaPath> {
        use EdgeType::*;
        use NodeType::*;
        vec![
            MetaPath { start: Query, steps: vec![(Semantic, Query), (Semantic, Query)] },
            MetaPath { start: Query, steps: vec![(Click, Item), (CoClick, Item)] },
            MetaPath { start: Query, steps: vec![(Click, Ad), (CoBid, Ad)] },
            MetaPath { start: Item, steps: vec![(Click, Query), (Semantic, Query)] },
            MetaPath { start: Item, steps: vec![(CoClick, Item), (CoClick, Item)] },
            MetaPath { start: Item, steps: vec![(CoClick, Ad), (CoBid, Ad)] },
        ]
    }
}

/// Walk from `start` along `path`, choosing uniformly among type-compatible
/// neighbors at each step; truncates where no compatible neighbor exists.
pub fn metapath_walk<R: Rng>(
    g: &HeteroGraph,
    path: &MetaPath,
    start: u32,
    rng: &mut R,
) -> Result<Vec<u32>, GraphError> {
    if g.node_type(start) != path.start {
        return Err(GraphError::TypeMismatch {
            id: g.id(start).to_string(),
            expected: path.start,
            actual: g.node_type(start),
        });
    }
    let mut seq = vec![start];
    let mut cur = start;
    for (etype, target) in &path.steps {
        let candidates: Vec<u32> = g
            .neighbors(*etype, cur)
            .iter()
            .copied()
            .filter(|&n| g.node_type(n) == *target)
            .collect();
        if candidates.is_empty() {
            break;
        }
        cur = candidates[rng.gen_range(0..candidates.len())];
        seq.push(cur);
    }
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositivePair {
    pub src: u32,
    pub pos: u32,
    pub relation: EdgeSpace,
}

/// Head-anchored pairs (seq[0], seq[j]) for j ≥ 1; pairs whose endpoints
/// differ in category are discarded.
pub fn extract_pairs(g: &HeteroGraph, seq: &[u32]) -> Vec<PositivePair> {
    let Some(&head) = seq.first() else {
        return Vec::new();
    };
    let head_cat = &g.node(head).category;
    seq[1..]
        .iter()
        .filter(|&&other| &g.node(other).category == head_cat)
        .map(|&other| PositivePair {
            src: head,
            pos: other,
            relation: EdgeSpace::for_pair(g.node_type(head), g.node_type(other)),
        })
        .collect()
}

const MAX_REJECTS: usize = 64;

/// Draw `k` negatives of `target` type for an anchor: ⌈k·e/(e+h)⌉ easy
/// (different category than the anchor) and the rest hard (same category),
/// all via alias tables. Small category buckets fall back to the full type
/// population; the positive itself is never returned.
pub fn sample_negatives<R: Rng>(
    g: &HeteroGraph,
    src: u32,
    pos: u32,
    target: NodeType,
    k: usize,
    easy_hard_ratio: (u32, u32),
    rng: &mut R,
) -> Result<Vec<u32>, GraphError> {
    let population = g.of_type(target);
    if population.is_empty() {
        return Err(GraphError::NoNodesOfType(target));
    }
    if population.len() == 1 && population[0] == pos {
        return Err(GraphError::NoValidNegative);
    }
    let (e, h) = easy_hard_ratio;
    let easy_n = (k as u64 * e as u64).div_ceil((e + h) as u64) as usize;
    let hard_n = k - easy_n;
    let src_cat = g.node(src).category.clone();
    let type_alias = g.type_alias(target).expect("nonempty population has a table");

    let draw_easy = |rng: &mut R| -> u32 {
        for _ in 0..MAX_REJECTS {
            let cand = population[type_alias.sample(rng)];
            if cand != pos && g.node(cand).category != src_cat {
                return cand;
            }
        }
        // Single-category fallback: accept any non-positive draw.
        loop {
            let cand = population[type_alias.sample(rng)];
            if cand != pos {
                return cand;
            }
        }
    };

    let bucket = g.category_bucket(target, &src_cat);
    let use_bucket = bucket.len() >= k && !(bucket.len() == 1 && bucket[0] == pos);
    let draw_hard = |rng: &mut R| -> u32 {
        if use_bucket {
            let table = g.category_alias(target, &src_cat).expect("bucket has a table");
            for _ in 0..MAX_REJECTS {
                let cand = bucket[table.sample(rng)];
                if cand != pos {
                    return cand;
                }
            }
        }
        loop {
            let cand = population[type_alias.sample(rng)];
            if cand != pos {
                return cand;
            }
        }
    };

    let mut negs = Vec::with_capacity(k);
    for _ in 0..easy_n {
        negs.push(draw_easy(rng));
    }
    for _ in 0..hard_n {
        negs.push(draw_hard(rng));
    }
    Ok(negs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleConfig {
    pub walks_per_node: usize,
    pub negatives: usize,
    pub easy_hard_ratio: (u32, u32),
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { walks_per_node: 2, negatives: 6, easy_hard_ratio: (2, 1), seed: 7 }
    }
}

/// Run every standard meta-path from every start node of the matching type
/// and turn the extracted pairs into training samples. Deterministic under
/// the config seed regardless of scheduling: each walk derives its own RNG.
pub fn generate_samples(g: &HeteroGraph, cfg: &SampleConfig) -> Vec<TrainingSample> {
    let mut out = Vec::new();
    for (p, path) in MetaPath::standard_paths().iter().enumerate() {
        for &start in g.of_type(path.start) {
            for w in 0..cfg.walks_per_node {
                let stream = ((p as u64) << 48) ^ ((start as u64) << 8) ^ w as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "walk", stream));
                let seq = metapath_walk(g, path, start, &mut rng).expect("typed start");
                for pair in extract_pairs(g, &seq) {
                    let target = g.node_type(pair.pos);
                    let Ok(negs) = sample_negatives(
                        g,
                        pair.src,
                        pair.pos,
                        target,
                        cfg.negatives,
                        cfg.easy_hard_ratio,
                        &mut rng,
                    ) else {
                        continue;
                    };
                    out.push(TrainingSample {
                        src: g.id(pair.src).to_string(),
                        pos: g.id(pair.pos).to_string(),
                        negs: negs.into_iter().map(|n| g.id(n).to_string()).collect(),
                        relation: pair.relation,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, NodeRecord};

    fn rec(id: &str, t: NodeType, cat: &str) -> NodeRecord {
        NodeRecord {
            id: id.into(),
            node_type: t,
            category: cat.into(),
            terms: vec![id.into()],
            brand: None,
            shop: None,
            bidding_words: Vec::new(),
        }
    }

    /// q1 –semantic– q2 –semantic– q3 plus an item chain for the q→i path.
    fn fixture() -> HeteroGraph {
        let mut b = GraphBuilder::new();
        for (id, t, cat) in [
            ("q1", NodeType::Query, "c1"),
            ("q2", NodeType::Query, "c1"),
            ("q3", NodeType::Query, "c1"),
            ("i1", NodeType::Item, "c1"),
            ("i2", NodeType::Item, "c1"),
        ] {
            b.add_node(rec(id, t, cat));
        }
        b.add_edge(EdgeType::Semantic, "q1", "q2").unwrap();
        b.add_edge(EdgeType::Semantic, "q2", "q3").unwrap();
        b.add_edge(EdgeType::Click, "q1", "i1").unwrap();
        b.add_edge(EdgeType::CoClick, "i1", "i2").unwrap();
        b.finish(2.0).0
    }

    #[test]
    fn standard_paths_are_type_consistent() {
        for path in MetaPath::standard_paths() {
            path.validate().unwrap();
        }
        // A co-bid hop cannot leave a query.
        assert!(matches!(
            MetaPath::new(NodeType::Query, vec![(EdgeType::CoBid, NodeType::Ad)]),
            Err(GraphError::InvalidMetaPath(_))
        ));
    }

    #[test]
    fn walk_follows_the_query_chain() {
        let g = fixture();
        let path = &MetaPath::standard_paths()[0];
        let q1 = g.lookup("q1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = metapath_walk(&g, path, q1, &mut rng).unwrap();
        let ids: Vec<&str> = seq.iter().map(|&n| g.id(n)).collect();
        // q2 is q1's only semantic neighbor; from q2 the walk may bounce
        // back to q1 or continue to q3.
        assert_eq!(ids[0], "q1");
        assert_eq!(ids[1], "q2");
        assert!(ids[2] == "q3" || ids[2] == "q1");
    }

    #[test]
    fn walk_truncates_without_compatible_neighbors() {
        let g = fixture();
        let path = &MetaPath::standard_paths()[2]; // q -click-> a: no ads here
        let q1 = g.lookup("q1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = metapath_walk(&g, path, q1, &mut rng).unwrap();
        assert_eq!(seq, vec![q1]);
    }

    #[test]
    fn walk_is_deterministic_under_a_seed() {
        let g = fixture();
        let path = &MetaPath::standard_paths()[0];
        let q1 = g.lookup("q1").unwrap();
        let a = metapath_walk(&g, path, q1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = metapath_walk(&g, path, q1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn walk_rejects_wrong_start_type() {
        let g = fixture();
        let path = &MetaPath::standard_paths()[0];
        let i1 = g.lookup("i1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            metapath_walk(&g, path, i1, &mut rng),
            Err(GraphError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn head_anchored_pairs_match_the_pattern() {
        let g = fixture();
        let seq: Vec<u32> =
            ["q1", "q2", "q3"].iter().map(|id| g.lookup(id).unwrap()).collect();
        let pairs = extract_pairs(&g, &seq);
        assert_eq!(pairs.len(), 2);
        assert_eq!(g.id(pairs[0].src), "q1");
        assert_eq!(g.id(pairs[0].pos), "q2");
        assert_eq!(g.id(pairs[1].pos), "q3");
        assert!(pairs.iter().all(|p| p.relation == EdgeSpace::QueryQuery));

        let seq: Vec<u32> =
            ["q1", "i1", "i2"].iter().map(|id| g.lookup(id).unwrap()).collect();
        let pairs = extract_pairs(&g, &seq);
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| p.relation == EdgeSpace::QueryItem));

        assert!(extract_pairs(&g, &seq[..1]).is_empty());
    }

    #[test]
    fn cross_category_pairs_are_discarded() {
        let mut b = GraphBuilder::new();
        b.add_node(rec("q1", NodeType::Query, "c1"));
        b.add_node(rec("q2", NodeType::Query, "c2"));
        b.add_edge(EdgeType::Semantic, "q1", "q2").unwrap();
        let g = b.finish(2.0).0;
        let seq = vec![g.lookup("q1").unwrap(), g.lookup("q2").unwrap()];
        assert!(extract_pairs(&g, &seq).is_empty());
    }

    fn negatives_fixture(categories: &[&str]) -> HeteroGraph {
        let mut b = GraphBuilder::new();
        b.add_node(rec("q1", NodeType::Query, categories[0]));
        for (i, cat) in categories.iter().enumerate() {
            b.add_node(rec(&format!("i{i}"), NodeType::Item, cat));
        }
        b.finish(2.0).0
    }

    #[test]
    fn negatives_split_easy_hard_by_the_ceiling_rule() {
        // Seven same-category candidates keep the hard bucket above K.
        let g = negatives_fixture(&[
            "c1", "c1", "c1", "c1", "c1", "c1", "c1", "c2", "c2", "c2", "c2", "c2", "c2", "c2",
        ]);
        let q1 = g.lookup("q1").unwrap();
        let pos = g.lookup("i0").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let negs =
            sample_negatives(&g, q1, pos, NodeType::Item, 6, (2, 1), &mut rng).unwrap();
        assert_eq!(negs.len(), 6);
        let hard = negs.iter().filter(|&&n| g.node(n).category == "c1").count();
        let easy = negs.iter().filter(|&&n| g.node(n).category != "c1").count();
        assert_eq!((easy, hard), (4, 2));
        assert!(negs.iter().all(|&n| n != pos));
    }

    #[test]
    fn single_negative_is_easy() {
        let g = negatives_fixture(&["c1", "c1", "c2", "c2", "c2"]);
        let q1 = g.lookup("q1").unwrap();
        let pos = g.lookup("i0").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let negs =
            sample_negatives(&g, q1, pos, NodeType::Item, 1, (2, 1), &mut rng).unwrap();
        assert_eq!(negs.len(), 1);
        assert_ne!(g.node(negs[0]).category, "c1");
    }

    #[test]
    fn single_category_graph_falls_back_without_returning_pos() {
        let g = negatives_fixture(&["c1"; 8]);
        let q1 = g.lookup("q1").unwrap();
        let pos = g.lookup("i0").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let negs =
            sample_negatives(&g, q1, pos, NodeType::Item, 6, (2, 1), &mut rng).unwrap();
        assert_eq!(negs.len(), 6);
        assert!(negs.iter().all(|&n| n != pos));
    }

    #[test]
    fn no_target_nodes_is_an_error() {
        let g = negatives_fixture(&["c1"]);
        let q1 = g.lookup("q1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            sample_negatives(&g, q1, q1, NodeType::Ad, 6, (2, 1), &mut rng),
            Err(GraphError::NoNodesOfType(NodeType::Ad))
        ));
    }

    #[test]
    fn generated_samples_are_seed_stable_and_well_typed() {
        let g = fixture();
        let cfg = SampleConfig { walks_per_node: 3, negatives: 3, ..Default::default() };
        let a = generate_samples(&g, &cfg);
        let b = generate_samples(&g, &cfg);
        assert_eq!(a, b);
        assert!(!a.is_empty());
        for s in &a {
            let src = g.lookup(&s.src).unwrap();
            let pos = g.lookup(&s.pos).unwrap();
            assert_eq!(g.node(src).category, g.node(pos).category);
            assert_eq!(
                s.relation,
                EdgeSpace::for_pair(g.node_type(src), g.node_type(pos))
            );
            for n in &s.negs {
                assert_ne!(n, &s.pos);
                assert_eq!(g.node_type(g.lookup(n).unwrap()), g.node_type(pos));
            }
        }
    }
}
