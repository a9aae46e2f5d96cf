//! Side files the CLI reads and writes next to the binary stores.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

/// JSON lines of `{"id": ..., "text": ...}`.
pub fn read_texts(path: &Path) -> Result<HashMap<String, String>> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextRecord =
            serde_json::from_str(line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        out.insert(rec.id, rec.text);
    }
    Ok(out)
}

pub fn write_texts<'a>(path: &Path, records: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    for (id, text) in records {
        serde_json::to_writer(&mut w, &TextRecord {
            id: id.to_owned(),
            text: text.to_owned(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
}

/// Keyword lists per feature, keyed by the feature index as a string.
pub fn read_keywords(path: &Path) -> Result<HashMap<usize, Vec<String>>> {
    let raw: BTreeMap<String, Vec<String>> = read_json(path)?;
    raw.into_iter()
        .map(|(k, v)| {
            let f = k.parse().with_context(|| format!("{}: feature key {k:?} is not an integer", path.display()))?;
            Ok((f, v))
        })
        .collect()
}

/// Tab-separated `query_id feature_a feature_b`.
pub fn read_perspectives(path: &Path) -> Result<Vec<(String, usize, usize)>> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || anyhow::anyhow!("{}: line {}: expected query_id feature feature", path.display(), i + 1);
        if f.len() != 3 {
            return Err(bad());
        }
        out.push((f[0].to_owned(), f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?));
    }
    Ok(out)
}
