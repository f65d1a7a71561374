//! Provenance stamped into every file the pipeline writes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    /// What the file holds, e.g. `captions` or `report`.
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
}

impl ArtifactMeta {
    pub fn new(kind: impl Into<String>, config_hash: impl Into<String>, seed: u64) -> Self {
        ArtifactMeta {
            kind: kind.into(),
            config_hash: config_hash.into(),
            seed,
        }
    }
}

/// Hex SHA-256 of the given parts, separated so that ("ab","c") != ("a","bc").
pub fn content_hash<I, S>(parts: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut h = Sha256::new();
    for p in parts {
        let p = p.as_ref();
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `meta` as the first line, then one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, meta: &ArtifactMeta, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", serde_json::to_string(meta)?).map_err(io)?;
    for it in items {
        writeln!(w, "{}", serde_json::to_string(it)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(ArtifactMeta, Vec<T>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut meta = None;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |e: serde_json::Error| Error::parse(path, i + 1, e.to_string());
        if meta.is_none() {
            meta = Some(serde_json::from_str(&line).map_err(err)?);
        } else {
            items.push(serde_json::from_str(&line).map_err(err)?);
        }
    }
    let meta = meta.ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    Ok((meta, items))
}

/// Reads only the header line of a file written by [`write_jsonl`] (or any
/// JSON document whose first line is the meta), `None` if absent/unreadable.
pub fn read_meta(path: impl AsRef<Path>) -> Option<ArtifactMeta> {
    let file = File::open(path).ok()?;
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line).ok()?;
    serde_json::from_str(&line).ok()
}
