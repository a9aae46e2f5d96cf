//! In-memory embedding collections and relevance judgments.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Query,
    Document,
}

impl StoreKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            StoreKind::Query => 0,
            StoreKind::Document => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(StoreKind::Query),
            1 => Some(StoreKind::Document),
            _ => None,
        }
    }
}

/// Id-addressed row-major matrix of `dim`-dimensional embeddings.
///
/// Rows are held as f64; the on-disk format stores f32, so values read from
/// disk (or converted from f32 dumps) round-trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    kind: StoreKind,
    ids: Vec<String>,
    data: Vec<f64>,
    positions: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, kind: StoreKind) -> Self {
        EmbeddingStore {
            dim,
            kind,
            ids: Vec::new(),
            data: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn from_rows<I, S>(dim: usize, kind: StoreKind, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut store = EmbeddingStore::new(dim, kind);
        for (id, row) in rows {
            store.push(id, &row)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, id: impl Into<String>, row: &[f64]) -> Result<()> {
        let id = id.into();
        if row.len() != self.dim {
            return Err(Error::dim(self.dim, row.len(), format!("row for id {id}")));
        }
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at column {i} of id {id}")));
        }
        if self.positions.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate id {id}")));
        }
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|r| self.row(r))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.dim, self.data.clone()).expect("store shape")
    }
}

/// Query → document → grade. A document is relevant when its grade is ≥ 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelSet {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment, keeping the larger grade on duplicates.
    /// Returns `true` when the pair was already present.
    pub fn insert(&mut self, query: impl Into<String>, doc: impl Into<String>, grade: u32) -> bool {
        let docs = self.judgments.entry(query.into()).or_default();
        match docs.entry(doc.into()) {
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let g = e.get_mut();
                *g = (*g).max(grade);
                true
            }
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(grade);
                false
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Number of judged queries.
    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn contains_query(&self, query: &str) -> bool {
        self.judgments.contains_key(query)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn judgments(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query)
    }

    pub fn grade(&self, query: &str, doc: &str) -> Option<u32> {
        self.judgments.get(query).and_then(|d| d.get(doc)).copied()
    }

    pub fn is_relevant(&self, query: &str, doc: &str) -> bool {
        self.grade(query, doc).is_some_and(|g| g >= 1)
    }

    /// Relevant documents of `query` in id order.
    pub fn relevant(&self, query: &str) -> impl Iterator<Item = &str> {
        self.judgments
            .get(query)
            .into_iter()
            .flat_map(|d| d.iter())
            .filter(|(_, g)| **g >= 1)
            .map(|(d, _)| d.as_str())
    }

    pub fn relevant_count(&self, query: &str) -> usize {
        self.relevant(query).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, docs)| docs.iter().map(move |(d, g)| (q.as_str(), d.as_str(), *g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_rejects_bad_rows() {
        let mut s = EmbeddingStore::new(2, StoreKind::Document);
        s.push("a", &[1.0, 2.0]).unwrap();
        assert!(s.push("a", &[1.0, 2.0]).is_err());
        assert!(s.push("b", &[1.0]).is_err());
        assert!(s.push("c", &[f64::INFINITY, 0.0]).is_err());
        assert_eq!(s.len(), 1);
        assert_eq!(s.get("a"), Some(&[1.0, 2.0][..]));
    }

    #[test]
    fn qrels_keep_max_grade() {
        let mut q = QrelSet::new();
        assert!(!q.insert("q1", "d1", 1));
        assert!(q.insert("q1", "d1", 2));
        assert!(q.insert("q1", "d1", 0));
        q.insert("q1", "d2", 0);
        assert_eq!(q.grade("q1", "d1"), Some(2));
        assert_eq!(q.relevant("q1").collect::<Vec<_>>(), vec!["d1"]);
        assert!(!q.is_relevant("q1", "d2"));
    }
}
