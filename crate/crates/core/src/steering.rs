//! Interactive steering sessions: a query latent plus an ordered edit list.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::control::amplify;
use crate::error::{Error, Result};
use crate::retrieval::{dense_retrieve_one, RankedList};
use crate::sae::{SaeParams, SparseLatent};
use crate::store::EmbeddingStore;

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub feature: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    Text(String),
    Id(String),
}

/// Applies `edits` in order to `encode(query)`.
pub fn replay_edits(params: &SaeParams, query: &[f64], edits: &[Edit]) -> Result<SparseLatent> {
    let mut h = params.encode(query)?;
    for e in edits {
        h = amplify(&h, e.feature, e.delta)?;
    }
    Ok(h)
}

/// Read-only model snapshot shared by all sessions.
#[derive(Debug, Clone)]
pub struct SteeringModel {
    pub params: SaeParams,
    /// Corpus decoded through the SAE once.
    pub corpus: EmbeddingStore,
    pub summaries: HashMap<usize, String>,
    pub texts: HashMap<String, String>,
    pub top_k: usize,
}

impl SteeringModel {
    /// Reconstructs `corpus` through `params`.
    pub fn new(params: SaeParams, corpus: &EmbeddingStore) -> Result<Self> {
        let (_, corpus) = crate::retrieval::reconstruct_store(&params, corpus)?;
        Ok(SteeringModel {
            params,
            corpus,
            summaries: HashMap::new(),
            texts: HashMap::new(),
            top_k: DEFAULT_TOP_K,
        })
    }

    pub fn with_summaries(mut self, summaries: HashMap<usize, String>) -> Self {
        self.summaries = summaries;
        self
    }

    pub fn with_texts(mut self, texts: HashMap<String, String>) -> Self {
        self.texts = texts;
        self
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }

    /// Decodes the latent and ranks the reconstructed corpus.
    pub fn retrieve(&self, query_id: &str, latent: &SparseLatent) -> Result<(Vec<f64>, RankedList)> {
        let x = self.params.decode(latent)?.into_inner();
        let list = dense_retrieve_one(query_id, &x, &self.corpus, self.top_k);
        Ok((x, list))
    }

    pub fn view(&self, session: &SteeringSession) -> Result<SessionView> {
        let latent = session.latent(&self.params)?;
        let (decoded, list) = self.retrieve(&session.id, &latent)?;
        let mut features: Vec<FeatureActivation> = latent
            .entries()
            .iter()
            .map(|&(index, activation)| FeatureActivation {
                index,
                activation,
                summary: self.summaries.get(&index).cloned(),
            })
            .collect();
        features.sort_by(|a, b| b.activation.total_cmp(&a.activation).then(a.index.cmp(&b.index)));
        Ok(SessionView {
            session_id: session.id.clone(),
            edits: session.edits.clone(),
            features,
            decoded_query: decoded,
            results: list
                .results
                .into_iter()
                .map(|(doc_id, score)| ResultRow {
                    snippet: self.texts.get(&doc_id).cloned(),
                    doc_id,
                    score,
                })
                .collect(),
        })
    }
}

/// A query embedding and the edits applied to it. The current latent is
/// always recomputed from these, never stored separately.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSession {
    pub id: String,
    pub source: QuerySource,
    pub query: Vec<f64>,
    pub edits: Vec<Edit>,
}

impl SteeringSession {
    pub fn new(id: impl Into<String>, source: QuerySource, query: Vec<f64>) -> Self {
        SteeringSession {
            id: id.into(),
            source,
            query,
            edits: Vec::new(),
        }
    }

    pub fn latent(&self, params: &SaeParams) -> Result<SparseLatent> {
        replay_edits(params, &self.query, &self.edits)
    }

    /// Validates the edit against the model before recording it.
    pub fn steer(&mut self, params: &SaeParams, edit: Edit) -> Result<()> {
        amplify(&params.encode(&self.query)?, edit.feature, edit.delta)?;
        self.edits.push(edit);
        Ok(())
    }

    pub fn remove_edit(&mut self, index: usize) -> Result<Edit> {
        if index >= self.edits.len() {
            return Err(Error::invalid(format!("no edit at index {index}")));
        }
        Ok(self.edits.remove(index))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureActivation {
    pub index: usize,
    pub activation: f64,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub doc_id: String,
    pub score: f64,
    pub snippet: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub edits: Vec<Edit>,
    pub features: Vec<FeatureActivation>,
    pub decoded_query: Vec<f64>,
    pub results: Vec<ResultRow>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StoreKind;
    use crate::synth::{generate_synthetic, SynthConfig};

    fn model() -> (SteeringModel, EmbeddingStore) {
        let bench = generate_synthetic(&SynthConfig {
            n_queries: 20,
            n_distractors: 100,
            ..SynthConfig::default()
        })
        .unwrap();
        let m = SteeringModel::new(bench.oracle_params(4).unwrap(), &bench.corpus).unwrap();
        (m, bench.queries)
    }

    #[test]
    fn zero_delta_matches_fresh_session() {
        let (m, q) = model();
        let mut s = SteeringSession::new("s", QuerySource::Id(q.id(0).into()), q.row(0).to_vec());
        let before = m.view(&s).unwrap();
        s.steer(&m.params, Edit { feature: 3, delta: 0.0 }).unwrap();
        let after = m.view(&s).unwrap();
        assert_eq!(before.results, after.results);
        assert_eq!(after.edits.len(), 1);
    }

    #[test]
    fn remove_replays_remaining_edits() {
        let (m, q) = model();
        let mut s = SteeringSession::new("s", QuerySource::Id(q.id(1).into()), q.row(1).to_vec());
        s.steer(&m.params, Edit { feature: 7, delta: 2.0 }).unwrap();
        s.steer(&m.params, Edit { feature: 9, delta: 1.0 }).unwrap();
        s.remove_edit(0).unwrap();
        let want = amplify(&m.params.encode(q.row(1)).unwrap(), 9, 1.0).unwrap();
        assert_eq!(s.latent(&m.params).unwrap(), want);
        assert!(s.remove_edit(5).is_err());
        assert!(s.steer(&m.params, Edit { feature: 10_000, delta: 1.0 }).is_err());
        assert_eq!(s.edits.len(), 1);
    }

    #[test]
    fn view_orders_features_by_activation() {
        let (m, q) = model();
        let s = SteeringSession::new("s", QuerySource::Text("x".into()), q.row(2).to_vec());
        let v = m.view(&s).unwrap();
        assert_eq!(v.results.len(), DEFAULT_TOP_K);
        assert!(v.features.windows(2).all(|w| w[0].activation >= w[1].activation));
        assert_eq!(m.corpus.kind(), StoreKind::Document);
    }
}
