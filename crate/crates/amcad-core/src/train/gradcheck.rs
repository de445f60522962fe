//! Central-finite-difference verification of the tape gradients, covering
//! every trainable tensor family including the curvatures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{batch_contexts, batch_loss, sample_loss_e, ResolvedSample, Result, TrainConfig};
use crate::autodiff::{GradStore, TapeEngine};
use crate::graph::HeteroGraph;
use crate::model::{ModelParams, ParamKey};
use crate::util::{derive_seed, fnv1a64};

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinates that only passed after shrinking h (crossed a
    /// ReLU/hinge kink at the original step size).
    pub kink_retries: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tol: f64,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

/// Relative error with an absolute floor, so coordinates whose true
/// gradient is ~0 are not judged against finite-difference noise.
fn rel_err(fd: f64, tape: f64) -> f64 {
    (fd - tape).abs() / (fd.abs() + tape.abs()).max(1e-4)
}

/// Compare the tape gradient of the batch loss against central finite
/// differences for a random subset of coordinates of every trainable
/// tensor (all dense tensors plus the feature rows the batch touches).
/// A coordinate failing at step `h` is retried at h/32: ReLU/hinge kink
/// crossings vanish under the smaller step, genuine gradient bugs do not.
pub fn check_gradients(
    params: &mut ModelParams,
    graph: &HeteroGraph,
    batch: &[ResolvedSample],
    cfg: &TrainConfig,
    h: f64,
    tol: f64,
    coords_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let contexts = batch_contexts(params, graph, batch, cfg.context_seed);

    // Tape gradient of the mean batch loss.
    let mut grads: GradStore<ParamKey> = GradStore::new();
    for s in batch {
        let mut e: TapeEngine<ParamKey> = TapeEngine::new();
        let (total, _, _) = sample_loss_e(&mut e, params, graph, s, &contexts, cfg)
            .map_err(super::TrainError::Model)?;
        grads.merge(e.tape.backward(total));
    }
    grads.scale(1.0 / batch.len() as f64);

    // Tensors to check: every trainable dense tensor plus touched rows.
    let mut keys: Vec<ParamKey> =
        params.dense_keys().filter(|k| params.trainable(k)).cloned().collect();
    for (k, _) in grads.iter() {
        if matches!(k, ParamKey::FeatureRow { .. }) {
            keys.push(k.clone());
        }
    }

    let mut entries = Vec::with_capacity(keys.len());
    let mut failures = Vec::new();
    for key in keys {
        let name = key.name();
        let len = params.value(&key).len();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, "gc", fnv1a64(name.as_bytes())));
        let n_check = coords_per_tensor.min(len);
        let mut coords: Vec<usize> = if len <= coords_per_tensor {
            (0..len).collect()
        } else {
            let mut set = std::collections::BTreeSet::new();
            while set.len() < n_check {
                set.insert(rng.gen_range(0..len));
            }
            set.into_iter().collect()
        };
        coords.dedup();

        let mut max_err = 0.0f64;
        let mut kink_retries = 0usize;
        for &i in &coords {
            let tape_g = grads.get(&key).map(|g| g[i]).unwrap_or(0.0);
            let fd = |params: &mut ModelParams, step: f64| -> Result<f64> {
                let orig = params.value(&key)[i];
                params.value_mut(&key, 0)[i] = orig + step;
                let up = batch_loss(params, graph, batch, &contexts, cfg)
                    .map_err(super::TrainError::Model)?;
                params.value_mut(&key, 0)[i] = orig - step;
                let down = batch_loss(params, graph, batch, &contexts, cfg)
                    .map_err(super::TrainError::Model)?;
                params.value_mut(&key, 0)[i] = orig;
                Ok((up - down) / (2.0 * step))
            };
            let mut err = rel_err(fd(params, h)?, tape_g);
            if err > tol {
                let retry = rel_err(fd(params, h / 32.0)?, tape_g);
                if retry <= tol {
                    kink_retries += 1;
                    err = retry;
                } else {
                    failures.push(format!(
                        "{name}[{i}]: fd rel err {retry:.3e} (tape {tape_g:.6e})"
                    ));
                    err = retry;
                }
            }
            max_err = max_err.max(err);
        }
        entries.push(GradCheckEntry {
            tensor: name,
            checked: coords.len(),
            max_rel_err: max_err,
            kink_retries,
        });
    }

    Ok(GradCheckReport { entries, tol, failures })
}
