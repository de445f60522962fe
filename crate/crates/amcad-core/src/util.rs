//! Small shared helpers: stable hashing, seed derivation, ndjson IO.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// FNV-1a 64-bit hash. Used for feature bucketing and seed derivation so
/// that results are stable across runs and platforms (the std hasher is
/// randomized per process).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer; mixes a seed with stream identifiers to derive
/// independent per-task RNG seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a label plus index.
pub fn derive_seed(base: u64, label: &str, idx: u64) -> u64 {
    mix64(base ^ fnv1a64(label.as_bytes()) ^ mix64(idx))
}

/// Read a newline-delimited JSON file, invoking `f` with (1-based line
/// number, parsed value). Blank lines are skipped.
pub fn read_ndjson<T, F>(path: &Path, mut f: F) -> std::io::Result<Result<(), String>>
where
    T: serde::de::DeserializeOwned,
    F: FnMut(usize, T) -> Result<(), String>,
{
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => return Ok(Err(format!("line {lineno}: {e}"))),
        };
        if let Err(e) = f(lineno, value) {
            return Ok(Err(format!("line {lineno}: {e}")));
        }
    }
    Ok(Ok(()))
}

/// Write an iterator of serializable values as newline-delimited JSON.
pub fn write_ndjson<T: serde::Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> std::io::Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
