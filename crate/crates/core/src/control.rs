//! Latent amplification and the decode-and-retrieve pipelines built on it.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dot;
use crate::retrieval::{dense_retrieve, reconstruct_store, top_scores, MetricsReport, RankedList};
use crate::sae::{SaeParams, SparseLatent};
use crate::store::{EmbeddingStore, QrelSet};

pub const GRID_START: f64 = 0.0004;
pub const DEFAULT_GRID_STEPS: usize = 16;
pub const PERSPECTIVE_CUTOFF: usize = 5;

/// Adds `delta` to one feature, inserting it when absent. The result may
/// hold more than k non-zeros.
pub fn amplify(latent: &SparseLatent, feature: usize, delta: f64) -> Result<SparseLatent> {
    if feature >= latent.latent_dim() {
        return Err(Error::invalid(format!(
            "feature {feature} out of range for latent dimension {}",
            latent.latent_dim()
        )));
    }
    if !delta.is_finite() {
        return Err(Error::invalid("amplification delta must be finite"));
    }
    let mut out = latent.clone();
    let entries = out.entries_mut();
    match entries.binary_search_by_key(&feature, |e| e.0) {
        Ok(i) => entries[i].1 += delta,
        Err(i) => entries.insert(i, (feature, delta)),
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Query,
    Document,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    Explicit,
    ArgmaxOfCounterpart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplificationPlan {
    pub target: Target,
    pub feature: usize,
    pub delta: f64,
    pub rule: SelectionRule,
}

/// How relevant-document latents are pooled to pick a query's target feature.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

/// Document-side evaluation scope.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentMode {
    /// One corpus in which every query's relevant docs are amplified.
    Shared,
    /// Each query sees the corpus with only its own relevant docs amplified.
    #[default]
    Isolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "target")]
pub enum Pipeline {
    Document { mode: DocumentMode },
    Query { aggregation: Aggregation },
}

/// Encoded queries and corpus plus their reconstructions; the common input
/// of every manipulation pipeline.
#[derive(Debug, Clone)]
pub struct ControlContext {
    pub params: SaeParams,
    pub qrels: QrelSet,
    pub query_ids: Vec<String>,
    pub query_latents: Vec<SparseLatent>,
    pub query_recon: EmbeddingStore,
    pub corpus_ids: Vec<String>,
    pub corpus_latents: Vec<SparseLatent>,
    pub corpus_recon: EmbeddingStore,
}

impl ControlContext {
    /// Keeps only judged queries.
    pub fn new(params: SaeParams, queries: &EmbeddingStore, corpus: &EmbeddingStore, qrels: &QrelSet) -> Result<Self> {
        let queries = crate::retrieval::judged_queries(queries, qrels)?;
        let (query_latents, query_recon) = reconstruct_store(&params, &queries)?;
        let (corpus_latents, corpus_recon) = reconstruct_store(&params, corpus)?;
        Ok(ControlContext {
            params,
            qrels: qrels.clone(),
            query_ids: queries.ids().to_vec(),
            query_latents,
            query_recon,
            corpus_ids: corpus.ids().to_vec(),
            corpus_latents,
            corpus_recon,
        })
    }

    fn relevant_rows(&self, qid: &str) -> Vec<usize> {
        self.qrels.relevant(qid).filter_map(|d| self.corpus_recon.position(d)).collect()
    }

    pub fn query_row(&self, qid: &str) -> Option<usize> {
        self.query_recon.position(qid)
    }

    /// Argmax feature of each query latent; `None` for empty latents.
    pub fn document_targets(&self) -> Vec<Option<usize>> {
        self.query_latents.iter().map(SparseLatent::argmax).collect()
    }

    /// Argmax of the pooled relevant-document latent of each query.
    pub fn query_targets(&self, aggregation: Aggregation) -> Vec<Option<usize>> {
        let n = self.params.latent_dim();
        self.query_ids
            .iter()
            .map(|qid| {
                let rows = self.relevant_rows(qid);
                if rows.is_empty() {
                    return None;
                }
                let mut pooled = vec![0.0; n];
                let mut seen = vec![false; n];
                for &r in &rows {
                    for &(j, v) in self.corpus_latents[r].entries() {
                        match aggregation {
                            Aggregation::Mean => pooled[j] += v / rows.len() as f64,
                            Aggregation::Max => pooled[j] = if seen[j] { pooled[j].max(v) } else { v },
                        }
                        seen[j] = true;
                    }
                }
                let active: Vec<(usize, f64)> = (0..n).filter(|&j| seen[j]).map(|j| (j, pooled[j])).collect();
                SparseLatent::new(active, n).ok()?.argmax()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ManipulationOutcome {
    pub store: EmbeddingStore,
    /// (query id, amplified feature) for each manipulated query.
    pub targets: Vec<(String, usize)>,
    /// Queries left out, e.g. because their latent is empty.
    pub skipped: Vec<String>,
}

/// Amplifies, in every query's relevant documents, the query's argmax
/// feature, then decodes the whole corpus. A document relevant to several
/// queries receives each amplification.
pub fn manipulate_documents(ctx: &ControlContext, delta: f64) -> Result<ManipulationOutcome> {
    let mut latents = ctx.corpus_latents.clone();
    let mut touched = HashSet::new();
    let mut targets = Vec::new();
    let mut skipped = Vec::new();
    for (qi, target) in ctx.document_targets().into_iter().enumerate() {
        let qid = &ctx.query_ids[qi];
        let rows = ctx.relevant_rows(qid);
        match target {
            Some(j) if !rows.is_empty() => {
                for r in rows {
                    latents[r] = amplify(&latents[r], j, delta)?;
                    touched.insert(r);
                }
                targets.push((qid.clone(), j));
            }
            _ => skipped.push(qid.clone()),
        }
    }
    if !skipped.is_empty() {
        log::warn!("{} queries skipped during document manipulation", skipped.len());
    }
    let mut store = ctx.corpus_recon.clone();
    let rows: Vec<usize> = {
        let mut v: Vec<usize> = touched.into_iter().collect();
        v.sort_unstable();
        v
    };
    let decoded: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&r| ctx.params.decode(&latents[r]).map(|x| x.into_inner()))
        .collect::<Result<_>>()?;
    store = replace_rows(&store, rows.iter().copied().zip(decoded))?;
    Ok(ManipulationOutcome { store, targets, skipped })
}

fn replace_rows(store: &EmbeddingStore, rows: impl IntoIterator<Item = (usize, Vec<f64>)>) -> Result<EmbeddingStore> {
    let replacements: HashMap<usize, Vec<f64>> = rows.into_iter().collect();
    let mut out = EmbeddingStore::new(store.dim(), store.kind());
    for (r, (id, x)) in store.rows().enumerate() {
        match replacements.get(&r) {
            Some(v) => out.push(id, v)?,
            None => out.push(id, x)?,
        }
    }
    Ok(out)
}

/// Amplifies each query's target feature (argmax of pooled relevant-doc
/// latents) and decodes the queries.
pub fn manipulate_queries(ctx: &ControlContext, delta: f64, aggregation: Aggregation) -> Result<ManipulationOutcome> {
    let mut targets = Vec::new();
    let mut skipped = Vec::new();
    let mut rows = Vec::new();
    for (qi, target) in ctx.query_targets(aggregation).into_iter().enumerate() {
        let qid = &ctx.query_ids[qi];
        match target {
            Some(j) => {
                let h = amplify(&ctx.query_latents[qi], j, delta)?;
                rows.push((qi, ctx.params.decode(&h)?.into_inner()));
                targets.push((qid.clone(), j));
            }
            None => skipped.push(qid.clone()),
        }
    }
    Ok(ManipulationOutcome {
        store: replace_rows(&ctx.query_recon, rows)?,
        targets,
        skipped,
    })
}

/// Per-query document manipulation: the query's relevant docs are
/// amplified on its argmax feature and everything else stays as
/// reconstructed.
pub fn isolated_document_runs(ctx: &ControlContext, delta: f64, cutoff: usize) -> Result<Vec<RankedList>> {
    let targets = ctx.document_targets();
    let base: Vec<Vec<f64>> = (0..ctx.query_ids.len())
        .into_par_iter()
        .map(|qi| {
            let q = ctx.query_recon.row(qi);
            (0..ctx.corpus_recon.len()).map(|r| dot(q, ctx.corpus_recon.row(r))).collect()
        })
        .collect();
    (0..ctx.query_ids.len())
        .into_par_iter()
        .map(|qi| {
            let qid = &ctx.query_ids[qi];
            let q = ctx.query_recon.row(qi);
            let mut scores = base[qi].clone();
            if let Some(j) = targets[qi] {
                for r in ctx.relevant_rows(qid) {
                    let x = ctx.params.decode(&amplify(&ctx.corpus_latents[r], j, delta)?)?;
                    scores[r] = dot(q, &x);
                }
            }
            let top = top_scores(scores.into_iter().enumerate(), cutoff);
            Ok(RankedList {
                query_id: qid.clone(),
                results: top.into_iter().map(|(r, s)| (ctx.corpus_ids[r].clone(), s)).collect(),
            })
        })
        .collect()
}

pub fn pipeline_runs(ctx: &ControlContext, pipeline: Pipeline, delta: f64, cutoff: usize) -> Result<Vec<RankedList>> {
    match pipeline {
        Pipeline::Document {
            mode: DocumentMode::Isolated,
        } => isolated_document_runs(ctx, delta, cutoff),
        Pipeline::Document {
            mode: DocumentMode::Shared,
        } => dense_retrieve(&ctx.query_recon, &manipulate_documents(ctx, delta)?.store, cutoff),
        Pipeline::Query { aggregation } => {
            dense_retrieve(&manipulate_queries(ctx, delta, aggregation)?.store, &ctx.corpus_recon, cutoff)
        }
    }
}

/// `start` followed by `steps` exact doublings (`steps + 1` levels).
pub fn grid_levels(start: f64, steps: usize) -> Result<Vec<f64>> {
    if !(start.is_finite() && start > 0.0) {
        return Err(Error::invalid("grid start must be positive"));
    }
    let mut levels = Vec::with_capacity(steps + 1);
    let mut v = start;
    for _ in 0..=steps {
        levels.push(v);
        v *= 2.0;
    }
    Ok(levels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub level: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub pipeline: Pipeline,
    /// Metrics without amplification.
    pub baseline: MetricsReport,
    pub points: Vec<GridPoint>,
}

impl GridSearchResult {
    pub fn levels(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.level).collect()
    }

    pub fn mrr_series(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.report.mrr).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            let line = serde_json::json!({
                "level": p.level,
                "mrr": p.report.mrr,
                "p10": p.report.p_at_10,
                "r10": p.report.r_at_10,
            });
            let _ = writeln!(s, "{line}");
        }
        s
    }

    /// Whitespace-separated table, plottable with a log x axis.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,mrr,p10,r10\n");
        for p in &self.points {
            let _ = writeln!(s, "{:?},{:.6},{:.6},{:.6}", p.level, p.report.mrr, p.report.p_at_10, p.report.r_at_10);
        }
        s
    }

    pub fn write(&self, jsonl: impl AsRef<Path>, csv: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(jsonl.as_ref(), self.to_jsonl().as_bytes())?;
        crate::io::write_atomic(csv.as_ref(), self.to_csv().as_bytes())
    }
}

/// Evaluates the pipeline at each doubling level from `start`; levels are
/// independent and run in parallel, results come back in level order.
pub fn amplification_grid_search(
    ctx: &ControlContext,
    pipeline: Pipeline,
    start: f64,
    steps: usize,
    cutoff: usize,
) -> Result<GridSearchResult> {
    let levels = grid_levels(start, steps)?;
    let depth = cutoff.max(crate::retrieval::DEFAULT_CUTOFF);
    let label = match pipeline {
        Pipeline::Document { .. } => "document",
        Pipeline::Query { .. } => "query",
    };
    let eval = |delta: f64| -> Result<MetricsReport> {
        let runs = pipeline_runs(ctx, pipeline, delta, depth)?;
        MetricsReport::compute(label, &runs, &ctx.qrels, cutoff)
    };
    let baseline = eval(0.0)?;
    let reports: Vec<MetricsReport> = levels.par_iter().map(|&l| eval(l)).collect::<Result<_>>()?;
    Ok(GridSearchResult {
        pipeline,
        baseline,
        points: levels
            .into_iter()
            .zip(reports)
            .map(|(level, report)| GridPoint { level, report })
            .collect(),
    })
}

/// Decides whether a document relates to a feature; `None` means unlabeled.
pub trait Labeler: Send + Sync {
    fn related(&self, doc_id: &str, feature: usize) -> Option<bool>;
}

/// Related when the document text contains any of the feature's keywords.
#[derive(Debug, Clone, Default)]
pub struct KeywordLabeler {
    doc_tokens: HashMap<String, HashSet<String>>,
    keywords: HashMap<usize, Vec<String>>,
}

impl KeywordLabeler {
    pub fn new<'a>(
        texts: impl IntoIterator<Item = (&'a str, &'a str)>,
        keywords: HashMap<usize, Vec<String>>,
    ) -> Self {
        KeywordLabeler {
            doc_tokens: texts
                .into_iter()
                .map(|(id, t)| (id.to_owned(), crate::interpret::tokenize(t).into_iter().collect()))
                .collect(),
            keywords: keywords
                .into_iter()
                .map(|(f, ks)| (f, ks.iter().flat_map(|k| crate::interpret::tokenize(k)).collect()))
                .collect(),
        }
    }
}

impl Labeler for KeywordLabeler {
    fn related(&self, doc_id: &str, feature: usize) -> Option<bool> {
        let toks = self.doc_tokens.get(doc_id)?;
        let keys = self.keywords.get(&feature)?;
        Some(keys.iter().any(|k| toks.contains(k)))
    }
}

/// Explicit (doc, feature) → related table, e.g. human annotations or
/// planted cluster membership.
#[derive(Debug, Clone, Default)]
pub struct TableLabeler {
    labels: HashMap<(String, usize), bool>,
}

impl TableLabeler {
    pub fn insert(&mut self, doc_id: impl Into<String>, feature: usize, related: bool) {
        self.labels.insert((doc_id.into(), feature), related);
    }

    /// Tab- or space-separated `doc_id feature 0|1` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = TableLabeler::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = |m: &str| Error::Parse {
                line: i + 1,
                message: m.to_owned(),
            };
            if f.len() != 3 {
                return Err(bad("expected: doc_id feature label"));
            }
            let feature = f[1].parse().map_err(|_| bad("feature must be an integer"))?;
            let related = match f[2] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label must be 0 or 1")),
            };
            out.insert(f[0], feature, related);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

impl Labeler for TableLabeler {
    fn related(&self, doc_id: &str, feature: usize) -> Option<bool> {
        self.labels.get(&(doc_id.to_owned(), feature)).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub doc_id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveOutcome {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    pub feature: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    pub delta: f64,
    pub cutoff: usize,
    /// `None` when some retrieved document has no label.
    pub before: Option<usize>,
    pub after: Option<usize>,
    pub labeled: bool,
    pub results_before: Vec<Snippet>,
    pub results_after: Vec<Snippet>,
}

fn count_related(list: &RankedList, feature: usize, labeler: &dyn Labeler) -> Option<usize> {
    let mut n = 0;
    for d in list.doc_ids() {
        if labeler.related(d, feature)? {
            n += 1;
        }
    }
    Some(n)
}

fn snippets(list: &RankedList, texts: Option<&HashMap<String, String>>) -> Vec<Snippet> {
    list.results
        .iter()
        .map(|(d, s)| Snippet {
            doc_id: d.clone(),
            score: *s,
            text: texts.and_then(|t| t.get(d)).cloned(),
        })
        .collect()
}

#[derive(Default)]
pub struct PerspectiveOptions<'a> {
    pub query_text: Option<String>,
    pub summaries: Option<&'a HashMap<usize, String>>,
    pub texts: Option<&'a HashMap<String, String>>,
}

/// Retrieves top-`cutoff` for the plain reconstructed query and for the
/// query amplified on each of the two features, counting related documents.
pub fn perspective_experiment(
    ctx: &ControlContext,
    query_id: &str,
    features: (usize, usize),
    delta: f64,
    cutoff: usize,
    labeler: &dyn Labeler,
    options: &PerspectiveOptions<'_>,
) -> Result<(PerspectiveOutcome, PerspectiveOutcome)> {
    if features.0 == features.1 {
        return Err(Error::invalid("perspective features must differ"));
    }
    let qi = ctx
        .query_row(query_id)
        .ok_or_else(|| Error::invalid(format!("unknown query {query_id}")))?;
    let retrieve = |x: &[f64]| crate::retrieval::dense_retrieve_one(query_id, x, &ctx.corpus_recon, cutoff);
    let before = retrieve(ctx.query_recon.row(qi));
    let outcome = |feature: usize| -> Result<PerspectiveOutcome> {
        let h = amplify(&ctx.query_latents[qi], feature, delta)?;
        let after = retrieve(&ctx.params.decode(&h)?);
        let b = count_related(&before, feature, labeler);
        let a = count_related(&after, feature, labeler);
        let labeled = a.is_some() && b.is_some();
        Ok(PerspectiveOutcome {
            query_id: query_id.to_owned(),
            query_text: options.query_text.clone(),
            feature,
            summary: options.summaries.and_then(|s| s.get(&feature)).cloned(),
            delta,
            cutoff,
            before: b.filter(|_| labeled),
            after: a.filter(|_| labeled),
            labeled,
            results_before: snippets(&before, options.texts),
            results_after: snippets(&after, options.texts),
        })
    };
    Ok((outcome(features.0)?, outcome(features.1)?))
}
