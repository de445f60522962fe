//! Evaluation: Next AUC, Hitrate@K and nDCG@K (reported ×100 to match
//! production-style tables), synthetic tree+cycle graph generation and the
//! experiment harness for space-type and subspace-count comparisons.

mod experiment;
mod synthetic;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use experiment::{
    run_experiment, subspace_sweep_points, ExperimentConfig, ExperimentGrid, ExperimentTable,
    MetricsRow,
};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use crate::graph::EdgeSpace;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("next_auc needs both positive and negative labels")]
    SingleClass,
    #[error("ground-truth list is empty")]
    EmptyTruth,
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Held-out evaluation data: per-query ground truth ranked by click count,
/// plus next-day positive edges and sampled negative non-edges.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalSet {
    /// query id → (item id, click count), sorted by count descending.
    pub item_truth: BTreeMap<String, Vec<(String, u32)>>,
    /// query id → (ad id, click count), sorted by count descending.
    pub ad_truth: BTreeMap<String, Vec<(String, u32)>>,
    pub positives: Vec<(String, String, EdgeSpace)>,
    pub negatives: Vec<(String, String, EdgeSpace)>,
}

/// Probability that a uniformly random positive outscores a random
/// negative, ties counting one half (rank-sum formulation).
pub fn next_auc(scores: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scores.iter().filter(|(_, label)| *label).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    // Average ranks across ties.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if scores[idx].1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64);
    Ok(auc)
}

/// Recall-style hitrate: 100·|top-K ∩ truth| / |truth|.
pub fn hitrate_at_k(retrieved: &[String], truth: &[String], k: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let truth_set: HashSet<&str> = truth.iter().map(|s| s.as_str()).collect();
    let hits = retrieved.iter().take(k).filter(|r| truth_set.contains(r.as_str())).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// 100·DCG@K/IDCG@K with linear click-count gains and 1/log₂(rank+1)
/// discounts.
pub fn ndcg_at_k(retrieved: &[String], truth_with_gains: &[(String, u32)], k: usize) -> Result<f64> {
    if truth_with_gains.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let gains: BTreeMap<&str, f64> =
        truth_with_gains.iter().map(|(id, g)| (id.as_str(), *g as f64)).collect();
    let dcg: f64 = retrieved
        .iter()
        .take(k)
        .enumerate()
        .filter_map(|(i, id)| {
            gains.get(id.as_str()).map(|g| g / ((i + 2) as f64).log2())
        })
        .sum();
    let mut ideal: Vec<f64> = gains.values().copied().collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 =
        ideal.iter().take(k).enumerate().map(|(i, g)| g / ((i + 2) as f64).log2()).sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * dcg / idcg)
}
