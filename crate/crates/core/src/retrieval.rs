//! Dense and sparse retrieval plus the MRR / P@k / R@k metric suite.
//!
//! Ties in score are broken by lower document row, i.e. corpus order.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, rank_order};
use crate::sae::{SaeParams, SparseLatent};
use crate::store::{EmbeddingStore, QrelSet, StoreKind};
use crate::training::mse_loss;

pub const DEFAULT_CUTOFF: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub results: Vec<(String, f64)>,
}

impl RankedList {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.results.iter().map(|r| r.0.as_str())
    }
}

/// Keeps the best `cutoff` (row, score) pairs under `rank_order`.
struct TopN {
    cutoff: usize,
    items: Vec<(usize, f64)>,
}

impl TopN {
    fn new(cutoff: usize) -> Self {
        TopN {
            cutoff,
            items: Vec::with_capacity(cutoff + 1),
        }
    }

    fn push(&mut self, row: usize, score: f64) {
        if self.items.len() == self.cutoff {
            let last = self.items[self.cutoff - 1];
            if rank_order((row, score), last) != Ordering::Less {
                return;
            }
        }
        let pos = self
            .items
            .partition_point(|&e| rank_order(e, (row, score)) == Ordering::Less);
        self.items.insert(pos, (row, score));
        self.items.truncate(self.cutoff);
    }

    fn into_list(self, query_id: &str, corpus_id: impl Fn(usize) -> String) -> RankedList {
        RankedList {
            query_id: query_id.to_owned(),
            results: self.items.into_iter().map(|(r, s)| (corpus_id(r), s)).collect(),
        }
    }
}

/// Best `cutoff` (row, score) pairs, score descending, ties by lower row.
pub(crate) fn top_scores(scores: impl IntoIterator<Item = (usize, f64)>, cutoff: usize) -> Vec<(usize, f64)> {
    let mut top = TopN::new(cutoff.max(1));
    for (r, s) in scores {
        top.push(r, s);
    }
    top.items
}

fn check_cutoff(cutoff: usize) -> Result<()> {
    if cutoff == 0 {
        return Err(Error::invalid("cutoff must be at least 1"));
    }
    Ok(())
}

/// Brute-force dot-product retrieval, parallel over queries.
pub fn dense_retrieve(queries: &EmbeddingStore, corpus: &EmbeddingStore, cutoff: usize) -> Result<Vec<RankedList>> {
    check_cutoff(cutoff)?;
    if queries.dim() != corpus.dim() {
        return Err(Error::dim(corpus.dim(), queries.dim(), "query store vs corpus"));
    }
    let lists = (0..queries.len())
        .into_par_iter()
        .map(|qi| dense_retrieve_one(queries.id(qi), queries.row(qi), corpus, cutoff))
        .collect();
    Ok(lists)
}

pub fn dense_retrieve_one(query_id: &str, query: &[f64], corpus: &EmbeddingStore, cutoff: usize) -> RankedList {
    let mut top = TopN::new(cutoff.max(1));
    for row in 0..corpus.len() {
        top.push(row, dot(query, corpus.row(row)));
    }
    top.into_list(query_id, |r| corpus.id(r).to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    latent_dim: usize,
    doc_ids: Vec<String>,
    /// Per feature: (doc ordinal, activation), ordinals ascending.
    postings: Vec<Vec<(u32, f64)>>,
    total_postings: usize,
}

impl InvertedIndex {
    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn total_postings(&self) -> usize {
        self.total_postings
    }

    pub fn postings(&self, feature: usize) -> &[(u32, f64)] {
        &self.postings[feature]
    }

    /// Rebuilds each document's latent from the postings.
    pub fn doc_latents(&self) -> Vec<SparseLatent> {
        let mut entries = vec![Vec::new(); self.doc_ids.len()];
        for (f, list) in self.postings.iter().enumerate() {
            for &(d, a) in list {
                entries[d as usize].push((f, a));
            }
        }
        entries
            .into_iter()
            .map(|e| SparseLatent::new(e, self.latent_dim).expect("postings are well formed"))
            .collect()
    }
}

/// Indexes documents in the given order; that order is the tie-break order.
pub fn build_inverted_index<'a, I, S>(latents: I) -> Result<InvertedIndex>
where
    I: IntoIterator<Item = (S, &'a SparseLatent)>,
    S: Into<String>,
{
    let mut latent_dim = None;
    let mut doc_ids = Vec::new();
    let mut postings: Vec<Vec<(u32, f64)>> = Vec::new();
    let mut total = 0;
    for (ord, (id, h)) in latents.into_iter().enumerate() {
        let n = *latent_dim.get_or_insert(h.latent_dim());
        if n != h.latent_dim() {
            return Err(Error::dim(n, h.latent_dim(), format!("latent_dim of document {ord}")));
        }
        if postings.is_empty() {
            postings = vec![Vec::new(); n];
        }
        let ord = u32::try_from(ord).map_err(|_| Error::invalid("too many documents for index"))?;
        for &(f, a) in h.entries() {
            if a != 0.0 {
                postings[f].push((ord, a));
                total += 1;
            }
        }
        doc_ids.push(id.into());
    }
    Ok(InvertedIndex {
        latent_dim: latent_dim.unwrap_or(0),
        doc_ids,
        postings,
        total_postings: total,
    })
}

/// Accumulator traversal over the query's posting lists. Only documents
/// sharing at least one feature with the query (both activations non-zero)
/// are candidates.
pub fn sparse_retrieve(index: &InvertedIndex, query_id: &str, query: &SparseLatent, cutoff: usize) -> Result<RankedList> {
    check_cutoff(cutoff)?;
    if index.num_docs() > 0 && query.latent_dim() != index.latent_dim {
        return Err(Error::dim(index.latent_dim, query.latent_dim(), "query latent vs index"));
    }
    let mut acc = vec![0.0f64; index.num_docs()];
    let mut touched = vec![false; index.num_docs()];
    let mut candidates = Vec::new();
    for &(f, qa) in query.entries() {
        if index.num_docs() == 0 {
            break;
        }
        if qa == 0.0 {
            continue;
        }
        for &(d, da) in &index.postings[f] {
            let d = d as usize;
            acc[d] += qa * da;
            if !touched[d] {
                touched[d] = true;
                candidates.push(d);
            }
        }
    }
    let mut top = TopN::new(cutoff);
    for d in candidates {
        top.push(d, acc[d]);
    }
    Ok(top.into_list(query_id, |r| index.doc_ids[r].clone()))
}

pub fn sparse_retrieve_all(
    index: &InvertedIndex,
    query_ids: &[String],
    latents: &[SparseLatent],
    cutoff: usize,
) -> Result<Vec<RankedList>> {
    if query_ids.len() != latents.len() {
        return Err(Error::dim(query_ids.len(), latents.len(), "query latents"));
    }
    query_ids
        .par_iter()
        .zip(latents.par_iter())
        .map(|(id, h)| sparse_retrieve(index, id, h, cutoff))
        .collect()
}

fn check_known(runs: &[RankedList], qrels: &QrelSet) -> Result<()> {
    for run in runs {
        if !qrels.contains_query(&run.query_id) {
            return Err(Error::invalid(format!("query {} has no judgments", run.query_id)));
        }
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn mrr(runs: &[RankedList], qrels: &QrelSet, cutoff: usize) -> Result<f64> {
    check_known(runs, qrels)?;
    Ok(mean(runs.iter().map(|run| {
        run.doc_ids()
            .take(cutoff)
            .position(|d| qrels.is_relevant(&run.query_id, d))
            .map_or(0.0, |p| 1.0 / (p + 1) as f64)
    })))
}

fn hits(run: &RankedList, qrels: &QrelSet, k: usize) -> usize {
    run.doc_ids().take(k).filter(|d| qrels.is_relevant(&run.query_id, d)).count()
}

pub fn precision_at(runs: &[RankedList], qrels: &QrelSet, k: usize) -> Result<f64> {
    check_cutoff(k)?;
    check_known(runs, qrels)?;
    Ok(mean(runs.iter().map(|run| hits(run, qrels, k) as f64 / k as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallOutcome {
    pub recall: f64,
    /// Queries excluded because they have no relevant documents.
    pub skipped: usize,
}

pub fn recall_at(runs: &[RankedList], qrels: &QrelSet, k: usize) -> Result<RecallOutcome> {
    check_cutoff(k)?;
    check_known(runs, qrels)?;
    let mut skipped = 0;
    let recall = mean(runs.iter().filter_map(|run| {
        let total = qrels.relevant_count(&run.query_id);
        if total == 0 {
            skipped += 1;
            return None;
        }
        Some(hits(run, qrels, k) as f64 / total as f64)
    }));
    if skipped > 0 {
        log::warn!("{skipped} queries without relevant documents excluded from recall");
    }
    Ok(RecallOutcome { recall, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub mrr: f64,
    pub p_at_10: f64,
    pub r_at_10: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mse: Option<f64>,
    pub cutoff: usize,
    pub queries: usize,
}

impl MetricsReport {
    /// MRR at `cutoff`, P and R at 10 (or `cutoff` if smaller).
    pub fn compute(label: &str, runs: &[RankedList], qrels: &QrelSet, cutoff: usize) -> Result<Self> {
        let k = DEFAULT_CUTOFF;
        Ok(MetricsReport {
            label: label.to_owned(),
            mrr: mrr(runs, qrels, cutoff)?,
            p_at_10: precision_at(runs, qrels, k)?,
            r_at_10: recall_at(runs, qrels, k)?.recall,
            mse: None,
            cutoff,
            queries: runs.len(),
        })
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "label\t{}", self.label);
        let _ = writeln!(s, "mrr@{}\t{:.6}", self.cutoff, self.mrr);
        let _ = writeln!(s, "p@10\t{:.6}", self.p_at_10);
        let _ = writeln!(s, "r@10\t{:.6}", self.r_at_10);
        if let Some(m) = self.mse {
            let _ = writeln!(s, "mse\t{m:.8}");
        }
        let _ = writeln!(s, "queries\t{}", self.queries);
        s
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub original: MetricsReport,
    pub reconstructed: MetricsReport,
    pub sparse: MetricsReport,
    pub eval_mse: f64,
}

impl FidelityReport {
    pub fn reports(&self) -> [&MetricsReport; 3] {
        [&self.original, &self.reconstructed, &self.sparse]
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<14}{:>10}{:>10}{:>10}\n", "embedding", "mrr", "p@10", "r@10");
        for r in self.reports() {
            let _ = writeln!(s, "{:<14}{:>10.4}{:>10.4}{:>10.4}", r.label, r.mrr, r.p_at_10, r.r_at_10);
        }
        let _ = writeln!(s, "eval mse {:.6}", self.eval_mse);
        s
    }
}

/// Reconstructs every row of a store through the SAE.
pub fn reconstruct_store(params: &SaeParams, store: &EmbeddingStore) -> Result<(Vec<SparseLatent>, EmbeddingStore)> {
    let out: Vec<(SparseLatent, Vec<f64>)> = (0..store.len())
        .into_par_iter()
        .map(|r| params.reconstruct(store.row(r)).map(|(h, x)| (h, x.into_inner())))
        .collect::<Result<_>>()?;
    let mut recon = EmbeddingStore::new(store.dim(), store.kind());
    let mut latents = Vec::with_capacity(out.len());
    for (r, (h, x)) in out.into_iter().enumerate() {
        recon.push(store.id(r), &x)?;
        latents.push(h);
    }
    Ok((latents, recon))
}

pub fn decode_store(params: &SaeParams, ids: &[String], latents: &[SparseLatent], kind: StoreKind) -> Result<EmbeddingStore> {
    let rows: Vec<Vec<f64>> = latents
        .par_iter()
        .map(|h| params.decode(h).map(|x| x.into_inner()))
        .collect::<Result<_>>()?;
    EmbeddingStore::from_rows(params.input_dim(), kind, ids.iter().cloned().zip(rows))
}

/// Mean MSE over judged queries and their relevant documents, each counted once.
pub fn eval_mse(params: &SaeParams, queries: &EmbeddingStore, corpus: &EmbeddingStore, qrels: &QrelSet) -> Result<f64> {
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut seen_docs = HashSet::new();
    for (qi, qid) in queries.ids().iter().enumerate() {
        if !qrels.contains_query(qid) {
            continue;
        }
        rows.push(queries.row(qi));
        for d in qrels.relevant(qid) {
            if let Some(r) = corpus.position(d) {
                if seen_docs.insert(r) {
                    rows.push(corpus.row(r));
                }
            }
        }
    }
    let losses: Vec<f64> = rows
        .par_iter()
        .map(|x| {
            let (_, xhat) = params.reconstruct(x)?;
            mse_loss(x, &xhat).map(|l| l.0)
        })
        .collect::<Result<_>>()?;
    Ok(mean(losses.into_iter()))
}

/// Three-way evaluation: original embeddings, reconstructions, sparse latents.
pub fn evaluate_fidelity(
    params: &SaeParams,
    queries: &EmbeddingStore,
    corpus: &EmbeddingStore,
    qrels: &QrelSet,
    cutoff: usize,
) -> Result<FidelityReport> {
    let queries = judged_queries(queries, qrels)?;
    let depth = cutoff.max(DEFAULT_CUTOFF);
    let original_runs = dense_retrieve(&queries, corpus, depth)?;
    let (q_lat, q_rec) = reconstruct_store(params, &queries)?;
    let (d_lat, d_rec) = reconstruct_store(params, corpus)?;
    let recon_runs = dense_retrieve(&q_rec, &d_rec, depth)?;
    let index = build_inverted_index(corpus.ids().iter().map(String::as_str).zip(&d_lat))?;
    let sparse_runs = sparse_retrieve_all(&index, queries.ids(), &q_lat, depth)?;
    let eval_mse = eval_mse(params, &queries, corpus, qrels)?;
    let mut reconstructed = MetricsReport::compute("reconstructed", &recon_runs, qrels, cutoff)?;
    reconstructed.mse = Some(eval_mse);
    Ok(FidelityReport {
        original: MetricsReport::compute("original", &original_runs, qrels, cutoff)?,
        reconstructed,
        sparse: MetricsReport::compute("sparse", &sparse_runs, qrels, cutoff)?,
        eval_mse,
    })
}

/// Subset of `queries` that have judgments, in store order.
pub fn judged_queries(queries: &EmbeddingStore, qrels: &QrelSet) -> Result<EmbeddingStore> {
    let mut out = EmbeddingStore::new(queries.dim(), queries.kind());
    for (id, row) in queries.rows() {
        if qrels.contains_query(id) {
            out.push(id, row)?;
        }
    }
    Ok(out)
}

pub fn format_run(runs: &[RankedList], tag: &str) -> String {
    let mut s = String::new();
    for run in runs {
        for (rank, (doc, score)) in run.results.iter().enumerate() {
            // {:?} on f64 prints the shortest round-tripping form
            let _ = writeln!(s, "{} Q0 {} {} {:?} {}", run.query_id, doc, rank + 1, score, tag);
        }
    }
    s
}

pub fn write_run(path: impl AsRef<Path>, runs: &[RankedList], tag: &str) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), format_run(runs, tag).as_bytes())
}

/// Parses a TREC run; lists keep file order per query, queries keep first-seen order.
pub fn parse_run(text: &str) -> Result<Vec<RankedList>> {
    let mut runs: Vec<RankedList> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 6 fields, found {}", f.len()),
            });
        }
        let score: f64 = f[4].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad score {:?}", f[4]),
        })?;
        f[3].parse::<usize>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad rank {:?}", f[3]),
        })?;
        match runs.last_mut() {
            Some(run) if run.query_id == f[0] => run.results.push((f[2].to_owned(), score)),
            _ => runs.push(RankedList {
                query_id: f[0].to_owned(),
                results: vec![(f[2].to_owned(), score)],
            }),
        }
    }
    Ok(runs)
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let bytes = crate::io::read_all(path.as_ref())?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format {
        offset: e.utf8_error().valid_up_to() as u64,
        message: "run file is not UTF-8".into(),
    })?;
    parse_run(&text)
}
