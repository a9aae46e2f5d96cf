//! Latent dumps as JSON lines: `{"id": ..., "latent_dim": n, "entries": [[i, v], ...]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::sae::SparseLatent;

#[derive(Serialize, Deserialize)]
struct LatentLine {
    id: String,
    latent_dim: usize,
    entries: Vec<(usize, f64)>,
}

pub fn write_latents<'a, I>(path: impl AsRef<Path>, latents: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a SparseLatent)>,
{
    let mut out = String::new();
    for (id, h) in latents {
        let line = LatentLine {
            id: id.to_owned(),
            latent_dim: h.latent_dim(),
            entries: h.entries().to_vec(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

pub fn read_latents(path: impl AsRef<Path>) -> Result<Vec<(String, SparseLatent)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LatentLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let h = SparseLatent::new(parsed.entries, parsed.latent_dim).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((parsed.id, h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejects_unsorted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.jsonl");
        let a = SparseLatent::new(vec![(1, 0.5), (7, -2.25)], 8).unwrap();
        let b = SparseLatent::empty(8);
        write_latents(&path, [("a", &a), ("b", &b)]).unwrap();
        let back = read_latents(&path).unwrap();
        assert_eq!(back, vec![("a".to_owned(), a), ("b".to_owned(), b)]);

        std::fs::write(&path, "{\"id\":\"x\",\"latent_dim\":4,\"entries\":[[3,1.0],[1,1.0]]}\n").unwrap();
        assert!(matches!(read_latents(&path), Err(Error::Parse { line: 1, .. })));
    }
}
