//! Joint training of all relations: triplet loss with the Fermi-Dirac
//! decoder, curved-space origin regularization, tangent-space AdaGrad with
//! gradient clipping and warm-up, checkpointing and LRU feature eviction.

mod checkpoint;
mod gradcheck;
mod optim;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{check_gradients, GradCheckEntry, GradCheckReport};
pub use optim::{clip_global_norm, OptimizerState, ADAGRAD_EPS};

use crate::autodiff::curved::distance_to_origin_e;
use crate::autodiff::{Engine, EvalEngine, GradStore, TapeEngine};
use crate::graph::{EdgeSpace, HeteroGraph, NodeType, TrainingSample};
use crate::model::{
    encode_e, fermi_dirac_e, field_tokens, fields_for, pair_score_e, sample_context, ModelError,
    ModelParams, NodeContext, ParamKey, ProductEmb,
};
use crate::tensorio::TensorIoError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("triplet loss needs at least one negative")]
    EmptyNegatives,
    #[error("unknown node id in sample: {0}")]
    UnknownNode(String),
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    TensorIo(#[from] TensorIoError),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub margin: f64,
    pub fd_radius: f64,
    pub fd_temperature: f64,
    pub reg_weight: f64,
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Context-sampling seed; fixed so encodes are reproducible.
    pub context_seed: u64,
    /// Compute per-sample gradients in parallel. Gradients fold in sample
    /// order either way, so results are bitwise equal to sequential mode.
    pub parallel: bool,
}

impl TrainConfig {
    /// Desk-scale defaults; production would use batch 1024.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 256,
            lr: 1e-2,
            warmup_steps: 1000,
            clip_norm: 1.0,
            margin: 0.5,
            fd_radius: 1.0,
            fd_temperature: 5.0,
            reg_weight: 0.001,
            negatives: 6,
            epochs: 1,
            seed: 7,
            context_seed: 7,
            parallel: true,
        }
    }
}

/// A training sample with ids resolved against the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSample {
    pub src: u32,
    pub pos: u32,
    pub negs: Vec<u32>,
    pub relation: EdgeSpace,
}

pub fn resolve_samples(
    g: &HeteroGraph,
    samples: &[TrainingSample],
) -> Result<Vec<ResolvedSample>> {
    samples
        .iter()
        .map(|s| {
            let look =
                |id: &str| g.lookup(id).ok_or_else(|| TrainError::UnknownNode(id.to_string()));
            Ok(ResolvedSample {
                src: look(&s.src)?,
                pos: look(&s.pos)?,
                negs: s.negs.iter().map(|n| look(n)).collect::<Result<_>>()?,
                relation: s.relation,
            })
        })
        .collect()
}

/// Mean hinge over the negatives: (1/K)·Σ max(0, m + sim_neg − sim_pos).
pub fn triplet_loss(sim_pos: f64, sim_negs: &[f64], margin: f64) -> Result<f64> {
    if sim_negs.is_empty() {
        return Err(TrainError::EmptyNegatives);
    }
    let sum: f64 =
        sim_negs.iter().map(|sn| (margin + sn - sim_pos).max(0.0)).sum();
    Ok(sum / sim_negs.len() as f64)
}

/// Unweighted product-space distance of each sample embedding to the
/// origin, summed over subspaces and nodes.
pub fn reg_loss(embeddings: &[(&ProductEmb<Vec<f64>>, NodeType)], params: &ModelParams) -> f64 {
    let mut e = EvalEngine::<ParamKey>::new();
    let mut total = 0.0;
    for (emb, t) in embeddings {
        for (m, part) in emb.parts.iter().enumerate() {
            let kappa = e.scalar(params.kappa_node(m as u8, *t));
            let p = e.constant(part.clone());
            let d = distance_to_origin_e(&mut e, &p, &kappa).expect("origin distance");
            total += d[0];
        }
    }
    total
}

/// Per-step summary for the metrics stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub triplet: f64,
    pub reg: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub curvatures: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub enum StepOutcome {
    Applied(StepStats),
    /// Non-finite loss or gradient (or a curvature-domain error): the
    /// update is skipped and training continues.
    Skipped { step: u64, reason: String },
}

type SampleGrad = (f64, f64, f64, GradStore<ParamKey>);

pub struct Trainer<'g> {
    pub params: ModelParams,
    pub opt: OptimizerState,
    pub cfg: TrainConfig,
    graph: &'g HeteroGraph,
    contexts: HashMap<u32, NodeContext>,
}

impl<'g> Trainer<'g> {
    pub fn new(params: ModelParams, graph: &'g HeteroGraph, cfg: TrainConfig) -> Self {
        Trainer { params, opt: OptimizerState::new(), graph, cfg, contexts: HashMap::new() }
    }

    pub fn with_state(
        params: ModelParams,
        opt: OptimizerState,
        graph: &'g HeteroGraph,
        cfg: TrainConfig,
    ) -> Self {
        Trainer { params, opt, graph, cfg, contexts: HashMap::new() }
    }

    pub fn graph(&self) -> &'g HeteroGraph {
        self.graph
    }

    fn context_for(&mut self, node: u32) -> NodeContext {
        let layers = self.params.space.layers;
        let fanout = self.params.space.fanout;
        let seed = self.cfg.context_seed;
        self.contexts
            .entry(node)
            .or_insert_with(|| sample_context(self.graph, node, layers, fanout, seed))
            .clone()
    }

    fn batch_contexts(&mut self, batch: &[ResolvedSample]) -> HashMap<u32, NodeContext> {
        let mut out = HashMap::new();
        for s in batch {
            for &n in std::iter::once(&s.src).chain(std::iter::once(&s.pos)).chain(&s.negs) {
                out.entry(n).or_insert_with(|| self.context_for(n));
            }
        }
        out
    }

    /// Stamp every feature row the batch will read, so LRU bookkeeping and
    /// sparse materialization happen before the read-only gradient pass.
    fn touch_features(&mut self, contexts: &HashMap<u32, NodeContext>) {
        let step = self.opt.step;
        let mut nodes: Vec<u32> = Vec::new();
        fn collect(ctx: &NodeContext, into: &mut Vec<u32>) {
            into.push(ctx.node);
            for per_type in &ctx.neighbors {
                for c in per_type {
                    collect(c, into);
                }
            }
        }
        for ctx in contexts.values() {
            collect(ctx, &mut nodes);
        }
        nodes.sort_unstable();
        nodes.dedup();
        let m_count = self.params.space.subspaces as u8;
        for n in nodes {
            let record = self.graph.node(n).clone();
            let t = record.node_type;
            for &field in fields_for(t) {
                for tok in field_tokens(&record, field) {
                    let bucket = self.params.bucket_for(t, field, tok);
                    for m in 0..m_count {
                        self.params.feature_table_mut(t, field, m).touch(bucket, step);
                    }
                }
            }
        }
    }

    /// One optimization step over a batch: forward + reverse-mode gradients
    /// per sample (optionally in parallel), fold in sample order, clip,
    /// warm-up-scaled AdaGrad update. Returns pre-update loss statistics.
    pub fn train_step(&mut self, batch: &[ResolvedSample]) -> Result<StepOutcome> {
        assert!(!batch.is_empty(), "empty batch");
        for s in batch {
            if s.negs.is_empty() {
                return Err(TrainError::EmptyNegatives);
            }
        }
        let contexts = self.batch_contexts(batch);
        self.touch_features(&contexts);

        let params = &self.params;
        let graph = self.graph;
        let cfg = &self.cfg;
        let one = |s: &ResolvedSample| -> Result<SampleGrad> {
            let mut e: TapeEngine<ParamKey> = TapeEngine::new();
            let (total, triplet, reg) = sample_loss_e(&mut e, params, graph, s, &contexts, cfg)?;
            let grads = e.tape.backward(total);
            Ok((
                e.tape.value(total)[0],
                e.tape.value(triplet)[0],
                e.tape.value(reg)[0],
                grads,
            ))
        };
        let results: Vec<Result<SampleGrad>> = if cfg.parallel {
            batch.par_iter().map(one).collect()
        } else {
            batch.iter().map(one).collect()
        };

        let mut grads: GradStore<ParamKey> = GradStore::new();
        let (mut loss, mut triplet, mut reg) = (0.0, 0.0, 0.0);
        for r in results {
            match r {
                Ok((l, t, rg, g)) => {
                    loss += l;
                    triplet += t;
                    reg += rg;
                    grads.merge(g);
                }
                Err(TrainError::Model(err)) => {
                    return Ok(StepOutcome::Skipped {
                        step: self.opt.step,
                        reason: format!("forward pass failed: {err}"),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        let inv = 1.0 / batch.len() as f64;
        loss *= inv;
        triplet *= inv;
        reg *= inv;
        grads.scale(inv);

        if !loss.is_finite() || !grads.is_finite() {
            return Ok(StepOutcome::Skipped {
                step: self.opt.step,
                reason: "non-finite loss or gradient".into(),
            });
        }

        let grad_norm = clip_global_norm(&mut grads, self.cfg.clip_norm);
        let lr = self.opt.effective_lr(self.cfg.lr, self.cfg.warmup_steps);
        self.opt.apply(&mut self.params, &grads, lr);
        self.opt.advance();

        Ok(StepOutcome::Applied(StepStats {
            step: self.opt.step,
            loss,
            triplet,
            reg,
            lr,
            grad_norm,
            curvatures: self.params.curvature_values(),
        }))
    }

    /// Run `steps` optimization steps, cycling the sample set in seeded
    /// shuffled epochs. The schedule position is a pure function of the
    /// optimizer step counter, so a resumed run replays the exact batch
    /// sequence an uninterrupted run would have seen.
    pub fn run(
        &mut self,
        samples: &[ResolvedSample],
        steps: u64,
        mut on_step: impl FnMut(&StepOutcome),
    ) -> Result<()> {
        assert!(!samples.is_empty(), "no training samples");
        let n = samples.len();
        let batches_per_epoch = n.div_ceil(self.cfg.batch_size) as u64;
        let seed = self.cfg.seed;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        let target = self.opt.step + steps;
        // Skipped steps leave opt.step unchanged; the offset moves this run
        // past the failing batch while keeping normal runs schedule-exact.
        let mut skip_offset = 0u64;
        let mut consecutive_skips = 0u32;
        while self.opt.step + skip_offset < target {
            let position = self.opt.step + skip_offset;
            let epoch = position / batches_per_epoch;
            let slot = (position % batches_per_epoch) as usize;
            let order = match &cached {
                Some((e, order)) if *e == epoch => order,
                _ => {
                    let mut order: Vec<usize> = (0..n).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(crate::util::derive_seed(
                        seed, "epoch", epoch,
                    ));
                    order.shuffle(&mut rng);
                    cached = Some((epoch, order));
                    &cached.as_ref().unwrap().1
                }
            };
            let start = slot * self.cfg.batch_size;
            let end = (start + self.cfg.batch_size).min(n);
            let batch: Vec<ResolvedSample> =
                order[start..end].iter().map(|&i| samples[i].clone()).collect();
            let outcome = self.train_step(&batch)?;
            match &outcome {
                StepOutcome::Applied(_) => consecutive_skips = 0,
                StepOutcome::Skipped { .. } => {
                    skip_offset += 1;
                    consecutive_skips += 1;
                    if consecutive_skips > 16 {
                        on_step(&outcome);
                        return Ok(());
                    }
                }
            }
            on_step(&outcome);
        }
        Ok(())
    }

    /// Evict least-recently-used feature rows across all tables, dropping
    /// their optimizer accumulators with them. Returns the eviction count.
    pub fn lru_evict(&mut self, capacity: usize) -> usize {
        lru_evict(&mut self.params, &mut self.opt, capacity)
    }
}

/// LRU feature-exit sweep over every feature table.
pub fn lru_evict(params: &mut ModelParams, opt: &mut OptimizerState, capacity: usize) -> usize {
    let mut evicted_keys: Vec<ParamKey> = Vec::new();
    for (&(t, field, m), table) in params.feature_tables_mut() {
        for bucket in table.evict_lru(capacity) {
            evicted_keys.push(ParamKey::FeatureRow { t, field, m, bucket });
        }
    }
    for key in &evicted_keys {
        opt.remove_accumulator(key);
    }
    evicted_keys.len()
}

/// Build the full loss for one sample on an engine:
/// total = triplet + reg_weight·reg.
pub fn sample_loss_e<E: Engine<Key = ParamKey>>(
    e: &mut E,
    params: &ModelParams,
    graph: &HeteroGraph,
    sample: &ResolvedSample,
    contexts: &HashMap<u32, NodeContext>,
    cfg: &TrainConfig,
) -> std::result::Result<(E::Val, E::Val, E::Val), ModelError> {
    let ctx = |n: u32| contexts.get(&n).expect("context precomputed");
    let src_t = graph.node_type(sample.src);
    let pos_t = graph.node_type(sample.pos);
    let r = sample.relation;

    let src_emb = encode_e(e, params, graph, ctx(sample.src))?;
    let pos_emb = encode_e(e, params, graph, ctx(sample.pos))?;
    let neg_embs: Vec<ProductEmb<E::Val>> = sample
        .negs
        .iter()
        .map(|&n| encode_e(e, params, graph, ctx(n)))
        .collect::<std::result::Result<_, _>>()?;

    let pos_dist = pair_score_e(e, params, &src_emb, src_t, &pos_emb, pos_t, r)?;
    let sim_pos = fermi_dirac_e(e, &pos_dist, cfg.fd_radius, cfg.fd_temperature);

    let margin = e.scalar(cfg.margin);
    let mut hinges = Vec::with_capacity(neg_embs.len());
    for (i, neg_emb) in neg_embs.iter().enumerate() {
        let neg_t = graph.node_type(sample.negs[i]);
        let neg_dist = pair_score_e(e, params, &src_emb, src_t, neg_emb, neg_t, r)?;
        let sim_neg = fermi_dirac_e(e, &neg_dist, cfg.fd_radius, cfg.fd_temperature);
        let gap = e.sub(&sim_neg, &sim_pos);
        let shifted = e.add(&margin, &gap);
        hinges.push(e.relu(&shifted));
    }
    let triplet = e.mean(&hinges);

    let mut reg_terms: Vec<E::Val> = Vec::new();
    {
        let mut add_reg = |e: &mut E, emb: &ProductEmb<E::Val>, t: NodeType| -> std::result::Result<(), ModelError> {
            for (m, part) in emb.parts.iter().enumerate() {
                let key = ParamKey::NodeKappa { m: m as u8, t };
                let trainable = params.trainable(&key);
                let data = params.value(&key).into_owned();
                let kappa = e.param(key, &data, trainable);
                let d = distance_to_origin_e(e, part, &kappa)?;
                reg_terms.push(d);
            }
            Ok(())
        };
        add_reg(e, &src_emb, src_t)?;
        add_reg(e, &pos_emb, pos_t)?;
        for (i, neg_emb) in neg_embs.iter().enumerate() {
            add_reg(e, neg_emb, graph.node_type(sample.negs[i]))?;
        }
    }
    let mut reg = e.scalar(0.0);
    for term in &reg_terms {
        reg = e.add(&reg, term);
    }

    let rw = e.scalar(cfg.reg_weight);
    let weighted = e.mul(&rw, &reg);
    let total = e.add(&triplet, &weighted);
    Ok((total, triplet, reg))
}

/// Plain batch loss (mean of per-sample totals) used by the finite
/// difference harness.
pub fn batch_loss(
    params: &ModelParams,
    graph: &HeteroGraph,
    batch: &[ResolvedSample],
    contexts: &HashMap<u32, NodeContext>,
    cfg: &TrainConfig,
) -> std::result::Result<f64, ModelError> {
    let mut total = 0.0;
    for s in batch {
        let mut e = EvalEngine::<ParamKey>::new();
        let (t, _, _) = sample_loss_e(&mut e, params, graph, s, contexts, cfg)?;
        total += t[0];
    }
    Ok(total / batch.len() as f64)
}

/// Contexts for every node a batch touches, with the trainer's sampling.
pub fn batch_contexts(
    params: &ModelParams,
    graph: &HeteroGraph,
    batch: &[ResolvedSample],
    context_seed: u64,
) -> HashMap<u32, NodeContext> {
    let mut out = HashMap::new();
    for s in batch {
        for &n in std::iter::once(&s.src).chain(std::iter::once(&s.pos)).chain(&s.negs) {
            out.entry(n).or_insert_with(|| {
                sample_context(graph, n, params.space.layers, params.space.fanout, context_seed)
            });
        }
    }
    out
}
