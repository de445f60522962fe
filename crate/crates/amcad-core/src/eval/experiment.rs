//! Experiment harness: trains each space configuration on the same
//! synthetic graph and samples, evaluates Next AUC / Hitrate@K / nDCG@K
//! against the held-out day, and emits JSON/CSV tables plus plot data for
//! subspace-count sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{generate_synthetic, hitrate_at_k, ndcg_at_k, next_auc, EvalSet, Result, SyntheticSpec};
use crate::eval::EvalError;
use crate::graph::{EdgeSpace, HeteroGraph, SampleConfig};
use crate::index::{knn_exact, precompute_store, EmbeddingStore, IndexType};
use crate::model::{fermi_dirac_sim, ModelParams, SpaceConfig};
use crate::train::{resolve_samples, StepOutcome, TrainConfig, Trainer};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub space: SpaceConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub synthetic: SyntheticSpec,
    pub steps: u64,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub seeds: Vec<u64>,
    pub configs: Vec<ExperimentConfig>,
    /// Cutoffs for Hitrate@K and nDCG@K.
    pub eval_k: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub config: String,
    /// None for a per-config mean row.
    pub seed: Option<u64>,
    pub subspaces: usize,
    pub total_dim: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<MetricsRow>,
}

impl ExperimentTable {
    pub fn mean_metric(&self, config: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.config == config && r.seed.is_none())
            .and_then(|r| r.metrics.get(metric).copied())
    }

    /// CSV with one column per metric name (union over rows).
    pub fn to_csv(&self) -> String {
        let mut names: Vec<&str> = Vec::new();
        for row in &self.rows {
            for k in row.metrics.keys() {
                if !names.contains(&k.as_str()) {
                    names.push(k);
                }
            }
        }
        let mut out = String::from("config,seed,subspaces,total_dim");
        for n in &names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.config);
            out.push(',');
            out.push_str(&row.seed.map(|s| s.to_string()).unwrap_or_else(|| "mean".into()));
            out.push_str(&format!(",{},{}", row.subspaces, row.total_dim));
            for n in &names {
                out.push(',');
                if let Some(v) = row.metrics.get(*n) {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("results.csv"))?;
        f.write_all(self.to_csv().as_bytes())?;
        crate::util::write_ndjson(&dir.join("results.ndjson"), self.rows.iter())?;
        let sweep = subspace_sweep_points(self);
        if !sweep.is_empty() {
            let mut f = std::fs::File::create(dir.join("subspace_sweep.csv"))?;
            f.write_all(b"subspaces,next_auc\n")?;
            for (m, auc) in sweep {
                writeln!(f, "{m},{auc}")?;
            }
        }
        Ok(())
    }
}

/// (subspace count, mean Next AUC) points at fixed total dimension, for the
/// subspace-number sweep plot.
pub fn subspace_sweep_points(table: &ExperimentTable) -> Vec<(usize, f64)> {
    let mut points: Vec<(usize, f64)> = table
        .rows
        .iter()
        .filter(|r| r.seed.is_none())
        .filter_map(|r| r.metrics.get("next_auc").map(|v| (r.subspaces, *v)))
        .collect();
    points.sort_by_key(|&(m, _)| m);
    points.dedup_by_key(|&mut (m, _)| m);
    points
}

/// Score the held-out positive/negative edges and per-query rankings with
/// the precomputed store.
pub fn evaluate_store(
    store: &EmbeddingStore,
    eval: &EvalSet,
    eval_k: &[usize],
) -> Result<BTreeMap<String, f64>> {
    let mut metrics = BTreeMap::new();

    let mut per_relation: BTreeMap<EdgeSpace, Vec<(f64, bool)>> = BTreeMap::new();
    let mut score_edge = |q: &str, t: &str, r: EdgeSpace, label: bool| {
        if let (Some(a), Some(b)) = (store.get(q), store.get(t)) {
            let sim = fermi_dirac_sim(
                store.pair_distance(a, b, r),
                store.fd_radius,
                store.fd_temperature,
            );
            per_relation.entry(r).or_default().push((sim, label));
        }
    };
    for (q, t, r) in &eval.positives {
        score_edge(q, t, *r, true);
    }
    for (q, t, r) in &eval.negatives {
        score_edge(q, t, *r, false);
    }
    let mut aucs = Vec::new();
    for (r, scores) in &per_relation {
        let auc = next_auc(scores)?;
        metrics.insert(format!("next_auc_{}", r.label()), auc);
        aucs.push(auc);
    }
    if aucs.is_empty() {
        return Err(EvalError::Config("no scorable held-out edges".into()));
    }
    metrics.insert("next_auc".into(), aucs.iter().sum::<f64>() / aucs.len() as f64);

    let max_k = eval_k.iter().copied().max().unwrap_or(10);
    for (truth, index_type, tag) in [
        (&eval.item_truth, IndexType::Q2I, "qi"),
        (&eval.ad_truth, IndexType::Q2A, "qa"),
    ] {
        let mut hit_sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        let mut ndcg_sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (q, list) in truth {
            if store.get(q).is_none() || list.is_empty() {
                continue;
            }
            let retrieved: Vec<String> = knn_exact(store, q, index_type, max_k, false)?
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            let truth_ids: Vec<String> = list.iter().map(|(id, _)| id.clone()).collect();
            for &k in eval_k {
                let h = hitrate_at_k(&retrieved, &truth_ids, k)?;
                let n = ndcg_at_k(&retrieved, list, k)?;
                let eh = hit_sums.entry(k).or_insert((0.0, 0));
                eh.0 += h;
                eh.1 += 1;
                let en = ndcg_sums.entry(k).or_insert((0.0, 0));
                en.0 += n;
                en.1 += 1;
            }
        }
        for (k, (sum, n)) in hit_sums {
            if n > 0 {
                metrics.insert(format!("hitrate@{k}_{tag}"), sum / n as f64);
            }
        }
        for (k, (sum, n)) in ndcg_sums {
            if n > 0 {
                metrics.insert(format!("ndcg@{k}_{tag}"), sum / n as f64);
            }
        }
    }
    Ok(metrics)
}

/// Train and evaluate one configuration for one seed.
pub fn run_one(
    graph: &HeteroGraph,
    eval: &EvalSet,
    space: &SpaceConfig,
    grid: &ExperimentGrid,
    seed: u64,
    on_step: &mut dyn FnMut(&StepOutcome),
) -> Result<BTreeMap<String, f64>> {
    let samples = crate::graph::generate_samples(
        graph,
        &SampleConfig { seed, ..grid.sample.clone() },
    );
    let resolved = resolve_samples(graph, &samples)?;
    let params = ModelParams::new(space.clone(), seed);
    let cfg = TrainConfig { seed, context_seed: seed, ..grid.train.clone() };
    let mut trainer = Trainer::new(params, graph, cfg);
    trainer.run(&resolved, grid.steps, |o| on_step(o))?;
    let store = precompute_store(
        &trainer.params,
        graph,
        trainer.cfg.context_seed,
        trainer.cfg.fd_radius,
        trainer.cfg.fd_temperature,
    )?;
    evaluate_store(&store, eval, &grid.eval_k)
}

/// Run the whole grid: every config × seed, plus per-config mean rows.
pub fn run_experiment(
    grid: &ExperimentGrid,
    mut progress: impl FnMut(&str, u64, &StepOutcome),
) -> Result<ExperimentTable> {
    let data = generate_synthetic(&grid.synthetic);
    let mut rows = Vec::new();
    for config in &grid.configs {
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for &seed in &grid.seeds {
            let metrics = run_one(
                &data.graph,
                &data.eval,
                &config.space,
                grid,
                seed,
                &mut |o| progress(&config.name, seed, o),
            )?;
            for (k, v) in &metrics {
                *sums.entry(k.clone()).or_default() += v;
            }
            rows.push(MetricsRow {
                config: config.name.clone(),
                seed: Some(seed),
                subspaces: config.space.subspaces,
                total_dim: config.space.total_dim(),
                metrics,
            });
        }
        let n = grid.seeds.len() as f64;
        rows.push(MetricsRow {
            config: config.name.clone(),
            seed: None,
            subspaces: config.space.subspaces,
            total_dim: config.space.total_dim(),
            metrics: sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
        });
    }
    Ok(ExperimentTable { rows })
}
