//! Vanilla AdaGrad over the sparse gradient store, with global-norm
//! clipping and linear learning-rate warm-up. Parameters live in tangent
//! space, so no manifold projection is applied to them.

use std::collections::BTreeMap;

use crate::autodiff::GradStore;
use crate::model::{ModelParams, ParamKey};

pub const ADAGRAD_EPS: f64 = 1e-8;

/// Per-parameter squared-gradient accumulators plus the applied-step count.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub step: u64,
    acc: BTreeMap<ParamKey, Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        OptimizerState::default()
    }

    pub fn accumulator(&self, key: &ParamKey) -> Option<&[f64]> {
        self.acc.get(key).map(|v| v.as_slice())
    }

    pub fn accumulators(&self) -> impl Iterator<Item = (&ParamKey, &[f64])> {
        self.acc.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn set_accumulator(&mut self, key: ParamKey, values: Vec<f64>) {
        self.acc.insert(key, values);
    }

    pub fn remove_accumulator(&mut self, key: &ParamKey) {
        self.acc.remove(key);
    }

    /// lr · min(1, step/warmup): non-decreasing until warm-up completes.
    /// `step` here is the 1-based number of the step being applied.
    pub fn effective_lr(&self, lr: f64, warmup_steps: u64) -> f64 {
        let current = self.step + 1;
        if warmup_steps == 0 || current >= warmup_steps {
            lr
        } else {
            lr * current as f64 / warmup_steps as f64
        }
    }

    /// AdaGrad: acc += g², p -= lr·g/(√acc + ε). Returns nothing; the step
    /// counter advances separately via [`OptimizerState::advance`].
    pub fn apply(&mut self, params: &mut ModelParams, grads: &GradStore<ParamKey>, lr: f64) {
        let step = self.step;
        for (key, g) in grads.iter() {
            let acc = self.acc.entry(key.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let p = params.value_mut(key, step);
            debug_assert_eq!(p.len(), g.len());
            for i in 0..g.len() {
                acc[i] += g[i] * g[i];
                p[i] -= lr * g[i] / (acc[i].sqrt() + ADAGRAD_EPS);
            }
        }
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

/// Scale all gradients so the global norm is at most `clip_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut GradStore<ParamKey>, clip_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > clip_norm && norm > 0.0 {
        grads.scale(clip_norm / norm);
    }
    norm
}
