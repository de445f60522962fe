//! Checkpointing: model parameters, feature rows with their LRU stamps and
//! optimizer accumulators in one tensor archive. Round-trips are bitwise
//! exact, so resumed training replays identically.

use std::collections::BTreeMap;
use std::path::Path;

use super::{OptimizerState, Result, TrainError};
use crate::model::{FeatureRow, ModelParams, ParamKey, SpaceConfig, Tensor};
use crate::tensorio::{read_archive, write_archive, ArchiveTensor, TensorIoError};

pub struct Checkpoint {
    pub params: ModelParams,
    pub opt: OptimizerState,
}

pub fn save_checkpoint(params: &ModelParams, opt: &OptimizerState, path: &Path) -> Result<()> {
    let header = serde_json::json!({
        "kind": "amcad-checkpoint",
        "space": params.space,
        "seed": params.seed,
        "step": opt.step,
    });
    let mut tensors: BTreeMap<String, ArchiveTensor> = BTreeMap::new();
    for key in params.dense_keys() {
        let t = params.dense(key);
        tensors.insert(
            format!("p/{}", key.name()),
            ArchiveTensor { shape: t.shape.clone(), data: t.data.clone() },
        );
    }
    for (&(t, field, m), table) in params.feature_tables() {
        let mut touch: Vec<f64> = Vec::new();
        for (bucket, row) in table.iter_rows() {
            let key = ParamKey::FeatureRow { t, field, m, bucket };
            tensors.insert(
                format!("f/{}", key.name()),
                ArchiveTensor { shape: vec![table.width], data: row.data.clone() },
            );
            touch.push(bucket as f64);
            touch.push(row.last_touch as f64);
        }
        if !touch.is_empty() {
            tensors.insert(
                format!("touch/{}/{}/{m}", t.label(), field.label()),
                ArchiveTensor { shape: vec![touch.len() / 2, 2], data: touch },
            );
        }
    }
    for (key, acc) in opt.accumulators() {
        tensors.insert(
            format!("o/{}", key.name()),
            ArchiveTensor { shape: vec![acc.len()], data: acc.to_vec() },
        );
    }
    write_archive(path, &header, &tensors)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expect: Option<&SpaceConfig>) -> Result<Checkpoint> {
    let (header, tensors) = read_archive(path)?;
    if header.get("kind").and_then(|v| v.as_str()) != Some("amcad-checkpoint") {
        return Err(TrainError::TensorIo(TensorIoError::Corrupt(
            "not a checkpoint archive".into(),
        )));
    }
    let space: SpaceConfig = serde_json::from_value(
        header.get("space").cloned().ok_or_else(|| {
            TrainError::TensorIo(TensorIoError::Corrupt("missing space config".into()))
        })?,
    )
    .map_err(TensorIoError::Json)?;
    if let Some(expect) = expect {
        if expect != &space {
            return Err(TrainError::ConfigMismatch(format!(
                "checkpoint has M={} d={} L={}, expected M={} d={} L={}",
                space.subspaces,
                space.dim,
                space.layers,
                expect.subspaces,
                expect.dim,
                expect.layers
            )));
        }
    }
    let seed = header.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
    let step = header.get("step").and_then(|v| v.as_u64()).unwrap_or(0);

    let mut params = ModelParams::new(space, seed);
    let mut opt = OptimizerState::new();
    opt.step = step;

    // Collect LRU stamps first so feature rows carry them on insert.
    let mut stamps: BTreeMap<String, BTreeMap<u32, u64>> = BTreeMap::new();
    for (name, t) in &tensors {
        if let Some(rest) = name.strip_prefix("touch/") {
            let map = stamps.entry(rest.to_string()).or_default();
            for pair in t.data.chunks(2) {
                map.insert(pair[0] as u32, pair[1] as u64);
            }
        }
    }
    let corrupt = |msg: String| TrainError::TensorIo(TensorIoError::Corrupt(msg));
    for (name, t) in &tensors {
        if let Some(rest) = name.strip_prefix("p/") {
            let key = ParamKey::parse(rest)
                .ok_or_else(|| corrupt(format!("unknown parameter {rest}")))?;
            params.set_dense(key, Tensor::new(t.shape.clone(), t.data.clone()));
        } else if let Some(rest) = name.strip_prefix("f/") {
            let key = ParamKey::parse(rest)
                .ok_or_else(|| corrupt(format!("unknown feature row {rest}")))?;
            let ParamKey::FeatureRow { t: nt, field, m, bucket } = key else {
                return Err(corrupt(format!("{rest} is not a feature row")));
            };
            let stamp = stamps
                .get(&format!("{}/{}/{m}", nt.label(), field.label()))
                .and_then(|m| m.get(&bucket))
                .copied()
                .unwrap_or(0);
            params.feature_table_mut(nt, field, m).insert_row(
                bucket,
                FeatureRow { data: t.data.clone(), last_touch: stamp },
            );
        } else if let Some(rest) = name.strip_prefix("o/") {
            let key = ParamKey::parse(rest)
                .ok_or_else(|| corrupt(format!("unknown optimizer entry {rest}")))?;
            opt.set_accumulator(key, t.data.clone());
        }
    }
    Ok(Checkpoint { params, opt })
}
