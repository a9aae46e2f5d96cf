//! Ingestion of external embedding dumps. Values pass through f32 so the
//! resulting store round-trips exactly through the binary format.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::store::{EmbeddingStore, StoreKind};

#[derive(Deserialize)]
struct JsonlRow {
    id: String,
    vector: Vec<f64>,
}

/// Reads JSON lines of `{"id": ..., "vector": [...]}`.
pub fn read_jsonl_embeddings(path: impl AsRef<Path>, kind: StoreKind) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut store: Option<EmbeddingStore> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let s = store.get_or_insert_with(|| EmbeddingStore::new(row.vector.len(), kind));
        let v: Vec<f64> = row.vector.iter().map(|x| *x as f32 as f64).collect();
        s.push(row.id, &v).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    store.ok_or_else(|| Error::invalid(format!("{}: no embeddings", path.display())))
}

/// Reads a raw little-endian f32 row-major matrix with one id per line in `ids`.
pub fn read_raw_matrix(
    matrix: impl AsRef<Path>,
    ids: impl AsRef<Path>,
    dim: usize,
    kind: StoreKind,
) -> Result<EmbeddingStore> {
    let (matrix, ids) = (matrix.as_ref(), ids.as_ref());
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let bytes = std::fs::read(matrix).map_err(|e| Error::io(matrix, e))?;
    let id_text = std::fs::read_to_string(ids).map_err(|e| Error::io(ids, e))?;
    let id_list: Vec<&str> = id_text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let expected = id_list.len() * dim * 4;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected) as u64,
            message: format!(
                "raw matrix has {} bytes, expected {expected} for {} ids × {dim}",
                bytes.len(),
                id_list.len()
            ),
        });
    }
    let mut store = EmbeddingStore::new(dim, kind);
    let mut row = vec![0.0; dim];
    for (i, id) in id_list.into_iter().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let o = (i * dim + c) * 4;
            *v = f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as f64;
        }
        store.push(id, &row)?;
    }
    Ok(store)
}
