//! Model parameters: dense tensors (layer/fusion/projection/attention
//! matrices, curvatures) and hash-bucketed feature-embedding tables with
//! lazy deterministic row materialization.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SpaceConfig;
use crate::graph::{EdgeSpace, NodeRecord, NodeType};
use crate::util::{derive_seed, fnv1a64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureField {
    Id,
    Category,
    Terms,
    BiddingWords,
    Brand,
    Shop,
}

impl FeatureField {
    pub fn label(self) -> &'static str {
        match self {
            FeatureField::Id => "id",
            FeatureField::Category => "category",
            FeatureField::Terms => "terms",
            FeatureField::BiddingWords => "bidding_words",
            FeatureField::Brand => "brand",
            FeatureField::Shop => "shop",
        }
    }

    fn parse(s: &str) -> Option<FeatureField> {
        Some(match s {
            "id" => FeatureField::Id,
            "category" => FeatureField::Category,
            "terms" => FeatureField::Terms,
            "bidding_words" => FeatureField::BiddingWords,
            "brand" => FeatureField::Brand,
            "shop" => FeatureField::Shop,
            _ => return None,
        })
    }
}

/// Feature fields per node type, in table order.
pub fn fields_for(t: NodeType) -> &'static [FeatureField] {
    use FeatureField::*;
    match t {
        NodeType::Query => &[Id, Category, Terms],
        NodeType::Item => &[Id, Category, Terms, Brand, Shop],
        NodeType::Ad => &[Id, Category, Terms, BiddingWords, Brand, Shop],
    }
}

/// Tokens a record contributes to a feature field. Multi-valued fields are
/// treated as sets: deduplicated and sorted for determinism.
pub fn field_tokens(record: &NodeRecord, field: FeatureField) -> Vec<&str> {
    match field {
        FeatureField::Id => vec![record.id.as_str()],
        FeatureField::Category => vec![record.category.as_str()],
        FeatureField::Terms => sorted_set(&record.terms),
        FeatureField::BiddingWords => sorted_set(&record.bidding_words),
        FeatureField::Brand => record.brand.as_deref().into_iter().collect(),
        FeatureField::Shop => record.shop.as_deref().into_iter().collect(),
    }
}

fn sorted_set(v: &[String]) -> Vec<&str> {
    let mut out: Vec<&str> = v.iter().map(|s| s.as_str()).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Split d into k nearly-equal positive widths (field concat widths).
pub fn field_widths(d: usize, k: usize) -> Vec<usize> {
    assert!(d >= k && k > 0, "need at least one dimension per field");
    let base = d / k;
    let rem = d % k;
    (0..k).map(|i| base + usize::from(i < rem)).collect()
}

/// Identity of one trainable tensor. Feature rows are individually keyed so
/// gradients and optimizer state stay sparse.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKey {
    LayerW { m: u8, t: NodeType, l: u8 },
    FusionW { m: u8, t: NodeType },
    ProjW { m: u8, t: NodeType },
    AttnW { t: NodeType },
    FeatureRow { t: NodeType, field: FeatureField, m: u8, bucket: u32 },
    NodeKappa { m: u8, t: NodeType },
    EdgeKappa { m: u8, r: EdgeSpace },
}

impl ParamKey {
    pub fn name(&self) -> String {
        match self {
            ParamKey::LayerW { m, t, l } => format!("layer_w/{m}/{}/{l}", t.label()),
            ParamKey::FusionW { m, t } => format!("fusion_w/{m}/{}", t.label()),
            ParamKey::ProjW { m, t } => format!("proj_w/{m}/{}", t.label()),
            ParamKey::AttnW { t } => format!("attn_w/{}", t.label()),
            ParamKey::FeatureRow { t, field, m, bucket } => {
                format!("feat/{}/{}/{m}/{bucket}", t.label(), field.label())
            }
            ParamKey::NodeKappa { m, t } => format!("kappa_node/{m}/{}", t.label()),
            ParamKey::EdgeKappa { m, r } => format!("kappa_edge/{m}/{}", r.label()),
        }
    }

    pub fn parse(name: &str) -> Option<ParamKey> {
        let parts: Vec<&str> = name.split('/').collect();
        let node_type = |s: &str| -> Option<NodeType> {
            Some(match s {
                "query" => NodeType::Query,
                "item" => NodeType::Item,
                "ad" => NodeType::Ad,
                _ => return None,
            })
        };
        let space = |s: &str| EdgeSpace::ALL.into_iter().find(|r| r.label() == s);
        match parts.as_slice() {
            ["layer_w", m, t, l] => Some(ParamKey::LayerW {
                m: m.parse().ok()?,
                t: node_type(t)?,
                l: l.parse().ok()?,
            }),
            ["fusion_w", m, t] => {
                Some(ParamKey::FusionW { m: m.parse().ok()?, t: node_type(t)? })
            }
            ["proj_w", m, t] => Some(ParamKey::ProjW { m: m.parse().ok()?, t: node_type(t)? }),
            ["attn_w", t] => Some(ParamKey::AttnW { t: node_type(t)? }),
            ["feat", t, field, m, bucket] => Some(ParamKey::FeatureRow {
                t: node_type(t)?,
                field: FeatureField::parse(field)?,
                m: m.parse().ok()?,
                bucket: bucket.parse().ok()?,
            }),
            ["kappa_node", m, t] => {
                Some(ParamKey::NodeKappa { m: m.parse().ok()?, t: node_type(t)? })
            }
            ["kappa_edge", m, r] => {
                Some(ParamKey::EdgeKappa { m: m.parse().ok()?, r: space(r)? })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub data: Vec<f64>,
    pub last_touch: u64,
}

/// One hash-bucketed embedding table. Rows materialize lazily from a pure
/// function of (table seed, bucket), so untouched rows need no storage and
/// an evicted row resets to its initializer exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub width: usize,
    pub buckets: u32,
    init_seed: u64,
    rows: BTreeMap<u32, FeatureRow>,
}

/// Initial coordinate range for feature rows.
const FEATURE_INIT_RANGE: f64 = 0.25;

impl FeatureTable {
    fn new(width: usize, buckets: u32, init_seed: u64) -> Self {
        FeatureTable { width, buckets, init_seed, rows: BTreeMap::new() }
    }

    pub fn initial_row(&self, bucket: u32) -> Vec<f64> {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.init_seed, "feat-row", bucket as u64));
        (0..self.width).map(|_| rng.gen_range(-FEATURE_INIT_RANGE..FEATURE_INIT_RANGE)).collect()
    }

    /// Read-only row value; virtual (initializer) when never touched.
    pub fn row(&self, bucket: u32) -> Cow<'_, [f64]> {
        match self.rows.get(&bucket) {
            Some(r) => Cow::Borrowed(&r.data),
            None => Cow::Owned(self.initial_row(bucket)),
        }
    }

    /// Materialize a row and stamp its last-touched step.
    pub fn touch(&mut self, bucket: u32, step: u64) -> &[f64] {
        let row = self.rows.entry(bucket).or_insert_with(|| FeatureRow {
            data: {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    self.init_seed,
                    "feat-row",
                    bucket as u64,
                ));
                (0..self.width)
                    .map(|_| rng.gen_range(-FEATURE_INIT_RANGE..FEATURE_INIT_RANGE))
                    .collect()
            },
            last_touch: step,
        });
        row.last_touch = step;
        &row.data
    }

    pub fn occupied(&self) -> usize {
        self.rows.len()
    }

    pub fn get_mut(&mut self, bucket: u32) -> Option<&mut FeatureRow> {
        self.rows.get_mut(&bucket)
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = (u32, &FeatureRow)> {
        self.rows.iter().map(|(b, r)| (*b, r))
    }

    pub fn insert_row(&mut self, bucket: u32, row: FeatureRow) {
        self.rows.insert(bucket, row);
    }

    /// Evict least-recently-touched rows until at most `capacity` remain.
    /// Returns the evicted keys (rows reset to their initializer).
    pub fn evict_lru(&mut self, capacity: usize) -> Vec<u32> {
        if self.rows.len() <= capacity {
            return Vec::new();
        }
        let mut order: Vec<(u64, u32)> =
            self.rows.iter().map(|(b, r)| (r.last_touch, *b)).collect();
        order.sort_unstable();
        let n_evict = self.rows.len() - capacity;
        let evicted: Vec<u32> = order[..n_evict].iter().map(|&(_, b)| b).collect();
        for b in &evicted {
            self.rows.remove(b);
        }
        evicted
    }
}

pub type FeatureTableKey = (NodeType, FeatureField, u8);

/// All trainable state of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub space: SpaceConfig,
    pub seed: u64,
    dense: BTreeMap<ParamKey, Tensor>,
    features: BTreeMap<FeatureTableKey, FeatureTable>,
}

impl ModelParams {
    pub fn new(space: SpaceConfig, seed: u64) -> Self {
        space.validate().expect("valid space config");
        let m_count = space.subspaces;
        let d = space.dim;
        let types = NodeType::ALL;
        let mut dense = BTreeMap::new();

        let mut glorot = |key: ParamKey, rows: usize, cols: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                "init",
                fnv1a64(key.name().as_bytes()),
            ));
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
            dense.insert(key, Tensor::new(vec![rows, cols], data));
        };

        for m in 0..m_count as u8 {
            for &t in &types {
                for l in 1..=space.layers as u8 {
                    glorot(ParamKey::LayerW { m, t, l }, d, (types.len() + 1) * d);
                }
                glorot(ParamKey::FusionW { m, t }, d, 2 * d);
                glorot(ParamKey::ProjW { m, t }, d, d);
            }
        }
        for &t in &types {
            glorot(ParamKey::AttnW { t }, m_count, m_count * d);
        }
        for m in 0..m_count as u8 {
            for &t in &types {
                dense.insert(
                    ParamKey::NodeKappa { m, t },
                    Tensor::scalar(space.curvature_mode.initial(m as usize)),
                );
            }
            for r in EdgeSpace::ALL {
                dense.insert(
                    ParamKey::EdgeKappa { m, r },
                    Tensor::scalar(space.curvature_mode.initial(m as usize)),
                );
            }
        }

        let mut features = BTreeMap::new();
        for &t in &types {
            let fields = fields_for(t);
            let widths = field_widths(d, fields.len());
            for m in 0..m_count as u8 {
                for (f, &field) in fields.iter().enumerate() {
                    let key = (t, field, m);
                    let init_seed = derive_seed(
                        seed,
                        "table",
                        fnv1a64(format!("{}/{}/{m}", t.label(), field.label()).as_bytes()),
                    );
                    features.insert(key, FeatureTable::new(widths[f], space.buckets, init_seed));
                }
            }
        }

        ModelParams { space, seed, dense, features }
    }

    pub fn dense(&self, key: &ParamKey) -> &Tensor {
        &self.dense[key]
    }

    /// Replace a dense tensor (shape-checked). Used by tests and ablation
    /// setups that pin specific weights.
    pub fn set_dense(&mut self, key: ParamKey, tensor: Tensor) {
        let old = self.dense.get(&key).expect("known parameter");
        assert_eq!(old.shape, tensor.shape, "shape mismatch for {}", key.name());
        self.dense.insert(key, tensor);
    }

    pub fn dense_keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.dense.keys()
    }

    pub fn kappa_node(&self, m: u8, t: NodeType) -> f64 {
        self.dense[&ParamKey::NodeKappa { m, t }].data[0]
    }

    pub fn kappa_edge(&self, m: u8, r: EdgeSpace) -> f64 {
        self.dense[&ParamKey::EdgeKappa { m, r }].data[0]
    }

    pub fn trainable(&self, key: &ParamKey) -> bool {
        match key {
            ParamKey::NodeKappa { .. } | ParamKey::EdgeKappa { .. } => {
                self.space.curvature_mode.trainable()
            }
            _ => true,
        }
    }

    pub fn feature_table(&self, t: NodeType, field: FeatureField, m: u8) -> &FeatureTable {
        &self.features[&(t, field, m)]
    }

    pub fn feature_table_mut(
        &mut self,
        t: NodeType,
        field: FeatureField,
        m: u8,
    ) -> &mut FeatureTable {
        self.features.get_mut(&(t, field, m)).expect("table exists")
    }

    pub fn feature_tables(&self) -> impl Iterator<Item = (&FeatureTableKey, &FeatureTable)> {
        self.features.iter()
    }

    pub fn feature_tables_mut(
        &mut self,
    ) -> impl Iterator<Item = (&FeatureTableKey, &mut FeatureTable)> {
        self.features.iter_mut()
    }

    pub fn bucket_for(&self, t: NodeType, field: FeatureField, token: &str) -> u32 {
        let h = fnv1a64(format!("{}/{}|{token}", t.label(), field.label()).as_bytes());
        (h % self.space.buckets as u64) as u32
    }

    /// Read a parameter value by key (feature rows read virtually).
    pub fn value(&self, key: &ParamKey) -> Cow<'_, [f64]> {
        match key {
            ParamKey::FeatureRow { t, field, m, bucket } => {
                self.feature_table(*t, *field, *m).row(*bucket)
            }
            _ => Cow::Borrowed(&self.dense[key].data),
        }
    }

    /// Mutable access for the optimizer; materializes feature rows.
    pub fn value_mut(&mut self, key: &ParamKey, step: u64) -> &mut [f64] {
        match key {
            ParamKey::FeatureRow { t, field, m, bucket } => {
                let table = self.features.get_mut(&(*t, *field, *m)).expect("table exists");
                table.touch(*bucket, step);
                &mut table.get_mut(*bucket).expect("just touched").data
            }
            _ => &mut self.dense.get_mut(key).expect("dense param").data,
        }
    }

    /// Current curvature values, named for the metrics stream.
    pub fn curvature_values(&self) -> Vec<(String, f64)> {
        self.dense
            .iter()
            .filter(|(k, _)| {
                matches!(k, ParamKey::NodeKappa { .. } | ParamKey::EdgeKappa { .. })
            })
            .map(|(k, v)| (k.name(), v.data[0]))
            .collect()
    }
}
