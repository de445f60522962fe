//! Flat tensor archive: a JSON header, a JSON manifest (name, shape, byte
//! offset) and little-endian `f64` data. Round-trips are bitwise exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

const MAGIC: &[u8; 8] = b"AMCDTNS1";

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Write `header` plus named tensors. Tensor order in the file follows the
/// map's key order, so identical content yields identical bytes.
pub fn write_archive(
    path: &Path,
    header: &serde_json::Value,
    tensors: &BTreeMap<String, ArchiveTensor>,
) -> Result<(), TensorIoError> {
    let mut manifest = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        let len = t.data.len() as u64;
        if t.shape.iter().product::<usize>() as u64 != len {
            return Err(TensorIoError::Corrupt(format!(
                "tensor {name}: shape {:?} does not match {} elements",
                t.shape, len
            )));
        }
        manifest.push(ManifestEntry { name: name.clone(), shape: t.shape.clone(), offset, len });
        offset += len;
    }
    let header_bytes = serde_json::to_vec(header)?;
    let manifest_bytes = serde_json::to_vec(&manifest)?;

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for t in tensors.values() {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive(
    path: &Path,
) -> Result<(serde_json::Value, BTreeMap<String, ArchiveTensor>), TensorIoError> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| TensorIoError::Corrupt("file shorter than magic".into()))?;
    if &magic != MAGIC {
        return Err(TensorIoError::Corrupt("bad magic".into()));
    }
    let read_block = |r: &mut BufReader<File>| -> Result<Vec<u8>, TensorIoError> {
        let mut lenb = [0u8; 8];
        r.read_exact(&mut lenb)
            .map_err(|_| TensorIoError::Corrupt("truncated length".into()))?;
        let len = u64::from_le_bytes(lenb) as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)
            .map_err(|_| TensorIoError::Corrupt("truncated block".into()))?;
        Ok(buf)
    };
    let header: serde_json::Value = serde_json::from_slice(&read_block(&mut r)?)?;
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&read_block(&mut r)?)?;

    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() % 8 != 0 {
        return Err(TensorIoError::Corrupt("data section not a multiple of 8".into()));
    }
    let total = data.len() / 8;
    let mut tensors = BTreeMap::new();
    for entry in manifest {
        let start = entry.offset as usize;
        let end = start + entry.len as usize;
        if end > total {
            return Err(TensorIoError::Corrupt(format!(
                "tensor {} extends past the data section",
                entry.name
            )));
        }
        let values: Vec<f64> = (start..end)
            .map(|i| f64::from_le_bytes(data[i * 8..(i + 1) * 8].try_into().unwrap()))
            .collect();
        tensors.insert(entry.name, ArchiveTensor { shape: entry.shape, data: values });
    }
    Ok((header, tensors))
}
