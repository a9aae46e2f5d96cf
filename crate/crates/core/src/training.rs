//! Reconstruction and retrieval-preserving objectives and the training loop.
//!
//! The objective mixes a per-embedding MSE with a KL divergence between the
//! softmax over a query's positive-document dot products computed on the
//! original embeddings (target, constant) and on the reconstructions:
//!
//! ```text
//! total = mean_e MSE(x_e, x̂_e) + λ · mean_q Σ_{d∈D⁺} P(q,d) log(P(q,d) / P(q̂,d̂))
//! ```

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{adam_step, axpy, cosine_lr, dot, AdamState, CosineSchedule};
use crate::sae::{SaeGradients, SaeParams};
use crate::store::{EmbeddingStore, QrelSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Queries per optimizer step; each brings its sampled positives.
    pub batch_size: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub positives_per_query: usize,
    pub kld_weight: f64,
    pub k: usize,
    pub latent_dim: usize,
    pub seed: u64,
    /// 1 runs the batch gradient on the calling thread. Any value yields
    /// bitwise-identical results; see [`combined_loss`].
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            epochs: 128,
            initial_lr: 1e-3,
            min_lr: 0.0,
            positives_per_query: 16,
            kld_weight: 1.0,
            k: 32,
            latent_dim: 256,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.positives_per_query == 0 || self.k == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("batch size, positives, k and latent dim must be positive"));
        }
        if self.k > self.latent_dim {
            return Err(Error::invalid(format!(
                "k = {} exceeds latent dimension {}",
                self.k, self.latent_dim
            )));
        }
        if !(self.kld_weight >= 0.0 && self.kld_weight.is_finite()) {
            return Err(Error::invalid("kld weight must be finite and >= 0"));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::invalid("initial learning rate must be > 0"));
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be >= 1"));
        }
        Ok(())
    }
}

/// Mean squared error over dimensions and its gradient w.r.t. `xhat`.
pub fn mse_loss(x: &[f64], xhat: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != xhat.len() {
        return Err(Error::dim(x.len(), xhat.len(), "mse operands"));
    }
    if x.is_empty() {
        return Err(Error::invalid("mse of empty vectors"));
    }
    let d = x.len() as f64;
    let mut sum = 0.0;
    let grad = x
        .iter()
        .zip(xhat)
        .map(|(a, b)| {
            let diff = b - a;
            sum += diff * diff;
            2.0 * diff / d
        })
        .collect();
    Ok((sum / d, grad))
}

/// Softmax over positive-document scores, stabilized by max subtraction.
pub fn positive_softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("softmax over no positives"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

fn log_softmax(scores: &[f64]) -> Vec<f64> {
    // centered first, so an exactly representable shift leaves the output bitwise unchanged
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| (s - max) - log_z).collect()
}

/// KL(P ‖ P̂) between the original and reconstructed positive softmaxes
/// given raw scores, plus the gradient w.r.t. the reconstructed scores.
pub fn kld_from_scores(original: &[f64], reconstructed: &[f64]) -> Result<(f64, Vec<f64>)> {
    if original.len() != reconstructed.len() {
        return Err(Error::dim(original.len(), reconstructed.len(), "score vectors"));
    }
    let p = positive_softmax(original)?;
    let p_hat = positive_softmax(reconstructed)?;
    let log_p = log_softmax(original);
    let log_q = log_softmax(reconstructed);
    let mut loss = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            loss += p[i] * (log_p[i] - log_q[i]);
        }
    }
    let grad = p_hat.iter().zip(&p).map(|(q, pi)| q - pi).collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KldOutput {
    pub loss: f64,
    pub grad_qhat: Vec<f64>,
    pub grad_docs_hat: Vec<Vec<f64>>,
}

/// KL divergence between dot-product softmaxes over a query's positives.
///
/// Originals are constants: gradients flow only into `qhat` and `docs_hat`.
pub fn kld_loss(q: &[f64], docs: &[&[f64]], qhat: &[f64], docs_hat: &[&[f64]]) -> Result<KldOutput> {
    if docs.is_empty() {
        return Err(Error::invalid("kld needs at least one positive"));
    }
    if docs.len() != docs_hat.len() {
        return Err(Error::dim(docs.len(), docs_hat.len(), "reconstructed positives"));
    }
    let d = q.len();
    if qhat.len() != d {
        return Err(Error::dim(d, qhat.len(), "reconstructed query"));
    }
    for (a, b) in docs.iter().zip(docs_hat) {
        if a.len() != d || b.len() != d {
            return Err(Error::dim(d, a.len().max(b.len()), "positive document"));
        }
    }
    let s: Vec<f64> = docs.iter().map(|x| dot(q, x)).collect();
    let s_hat: Vec<f64> = docs_hat.iter().map(|x| dot(qhat, x)).collect();
    let (loss, gs) = kld_from_scores(&s, &s_hat)?;
    let mut grad_qhat = vec![0.0; d];
    let mut grad_docs_hat = Vec::with_capacity(docs.len());
    for (g, dh) in gs.iter().zip(docs_hat) {
        axpy(*g, dh, &mut grad_qhat);
        grad_docs_hat.push(qhat.iter().map(|v| g * v).collect());
    }
    Ok(KldOutput {
        loss,
        grad_qhat,
        grad_docs_hat,
    })
}

/// One query of a training batch with its sampled positives.
#[derive(Debug, Clone)]
pub struct BatchQuery<'a> {
    pub query: &'a [f64],
    pub positives: Vec<&'a [f64]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub kld: f64,
    pub total: f64,
    /// Embeddings contributing to the MSE term (queries + positives).
    pub embeddings: usize,
    /// Queries without positives, left out of the KLD term.
    pub skipped_queries: usize,
}

struct ChunkOutput {
    mse_sum: f64,
    kld_sum: f64,
    grads: SaeGradients,
    hits: Vec<u32>,
}

const CHUNK_QUERIES: usize = 16;

fn chunk_loss(
    params: &SaeParams,
    chunk: &[BatchQuery<'_>],
    mse_scale: f64,
    kld_scale: f64,
) -> Result<ChunkOutput> {
    let mut grads = SaeGradients::zeros_like(params);
    let mut hits = vec![0u32; params.latent_dim()];
    let (mut mse_sum, mut kld_sum) = (0.0, 0.0);
    for item in chunk {
        let (hq, qhat) = params.reconstruct(item.query)?;
        let mut recon = Vec::with_capacity(item.positives.len());
        for p in &item.positives {
            recon.push(params.reconstruct(p)?);
        }
        let (m, mut gq) = mse_loss(item.query, &qhat)?;
        mse_sum += m;
        gq.iter_mut().for_each(|g| *g *= mse_scale);
        let mut gdocs = Vec::with_capacity(recon.len());
        for (p, (_, ph)) in item.positives.iter().zip(&recon) {
            let (m, mut g) = mse_loss(p, ph)?;
            mse_sum += m;
            g.iter_mut().for_each(|v| *v *= mse_scale);
            gdocs.push(g);
        }
        if !item.positives.is_empty() && kld_scale != 0.0 {
            let docs_hat: Vec<&[f64]> = recon.iter().map(|(_, x)| &x[..]).collect();
            let out = kld_loss(item.query, &item.positives, &qhat, &docs_hat)?;
            kld_sum += out.loss;
            axpy(kld_scale, &out.grad_qhat, &mut gq);
            for (g, k) in gdocs.iter_mut().zip(&out.grad_docs_hat) {
                axpy(kld_scale, k, g);
            }
        } else if !item.positives.is_empty() {
            // λ = 0: value still reported, no gradient contribution
            let docs_hat: Vec<&[f64]> = recon.iter().map(|(_, x)| &x[..]).collect();
            kld_sum += kld_loss(item.query, &item.positives, &qhat, &docs_hat)?.loss;
        }
        params.backward_into(item.query, &hq, &gq, &mut grads)?;
        for &(j, _) in hq.entries() {
            hits[j] += 1;
        }
        for ((p, (h, _)), g) in item.positives.iter().zip(&recon).zip(&gdocs) {
            params.backward_into(p, h, g, &mut grads)?;
            for &(j, _) in h.entries() {
                hits[j] += 1;
            }
        }
    }
    Ok(ChunkOutput {
        mse_sum,
        kld_sum,
        grads,
        hits,
    })
}

fn batch_loss(
    params: &SaeParams,
    batch: &[BatchQuery<'_>],
    kld_weight: f64,
    parallel: bool,
) -> Result<(LossBreakdown, SaeGradients, Vec<u32>)> {
    let embeddings: usize = batch.iter().map(|b| 1 + b.positives.len()).sum();
    let skipped = batch.iter().filter(|b| b.positives.is_empty()).count();
    let kld_queries = batch.len() - skipped;
    let mse_scale = if embeddings > 0 { 1.0 / embeddings as f64 } else { 0.0 };
    let kld_scale = if kld_queries > 0 {
        kld_weight / kld_queries as f64
    } else {
        0.0
    };
    let chunks: Vec<&[BatchQuery<'_>]> = batch.chunks(CHUNK_QUERIES).collect();
    let outputs: Vec<ChunkOutput> = if parallel {
        chunks
            .par_iter()
            .map(|c| chunk_loss(params, c, mse_scale, kld_scale))
            .collect::<Result<_>>()?
    } else {
        chunks
            .iter()
            .map(|c| chunk_loss(params, c, mse_scale, kld_scale))
            .collect::<Result<_>>()?
    };
    // ordered reduction: identical sums whatever the thread count
    let mut grads = SaeGradients::zeros_like(params);
    let mut hits = vec![0u32; params.latent_dim()];
    let (mut mse_sum, mut kld_sum) = (0.0, 0.0);
    for out in &outputs {
        grads.add_assign(&out.grads);
        mse_sum += out.mse_sum;
        kld_sum += out.kld_sum;
        for (h, o) in hits.iter_mut().zip(&out.hits) {
            *h += o;
        }
    }
    let mse = mse_sum * mse_scale;
    let kld = if kld_queries > 0 {
        kld_sum / kld_queries as f64
    } else {
        0.0
    };
    let breakdown = LossBreakdown {
        mse,
        kld,
        total: mse + kld_weight * kld,
        embeddings,
        skipped_queries: skipped,
    };
    Ok((breakdown, grads, hits))
}

/// Combined objective over a batch and its exact gradient (fixed TopK masks).
///
/// `total = mean MSE over every embedding in the batch + λ · mean KLD over
/// queries that have positives`. With λ = 0 this is exactly the MSE-only
/// objective.
pub fn combined_loss(
    params: &SaeParams,
    batch: &[BatchQuery<'_>],
    kld_weight: f64,
) -> Result<(LossBreakdown, SaeGradients)> {
    let (b, g, _) = batch_loss(params, batch, kld_weight, false)?;
    Ok((b, g))
}

/// Adam state for every tensor of an [`SaeParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeOptimizer {
    pub tensors: Vec<AdamState>,
}

impl SaeOptimizer {
    pub fn new(params: &SaeParams) -> Self {
        SaeOptimizer {
            tensors: params.tensor_lens().iter().map(|&l| AdamState::new(l)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut SaeParams, grads: &SaeGradients, lr: f64) -> Result<()> {
        if self.tensors.len() != 4 {
            return Err(Error::invalid("optimizer state must track four tensors"));
        }
        for ((p, g), s) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.tensors.iter_mut())
        {
            adam_step(p, g, s, lr)?;
        }
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.tensors.first().map_or(0, |t| t.step_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mse: f64,
    pub kld: f64,
    pub total: f64,
    pub dead_latents: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kld_weight: f64,
    pub records: Vec<EpochRecord>,
    /// Queries with no relevant documents (MSE only).
    pub queries_without_positives: usize,
}

impl TrainReport {
    /// Line-delimited JSON, one record per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Training examples resolved against the stores: query row plus the rows
/// of its relevant documents, in query-id / doc-id order.
#[derive(Debug, Clone)]
pub struct TrainingSet<'a> {
    queries: &'a EmbeddingStore,
    corpus: &'a EmbeddingStore,
    examples: Vec<(usize, Vec<usize>)>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(queries: &'a EmbeddingStore, corpus: &'a EmbeddingStore, qrels: &QrelSet) -> Result<Self> {
        if qrels.is_empty() {
            return Err(Error::invalid("training needs a non-empty qrel set"));
        }
        if queries.dim() != corpus.dim() {
            return Err(Error::dim(queries.dim(), corpus.dim(), "query vs corpus dimension"));
        }
        let mut examples = Vec::with_capacity(qrels.len());
        for qid in qrels.queries() {
            let qrow = queries
                .position(qid)
                .ok_or_else(|| Error::invalid(format!("query {qid} missing from query store")))?;
            let docs = qrels
                .relevant(qid)
                .map(|d| {
                    corpus
                        .position(d)
                        .ok_or_else(|| Error::invalid(format!("document {d} missing from corpus store")))
                })
                .collect::<Result<Vec<_>>>()?;
            examples.push((qrow, docs));
        }
        Ok(TrainingSet {
            queries,
            corpus,
            examples,
        })
    }

    pub fn dim(&self) -> usize {
        self.queries.dim()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn init_sample(&self, limit: usize) -> Vec<&'a [f64]> {
        let mut out = Vec::new();
        'outer: for (q, docs) in &self.examples {
            out.push(self.queries.row(*q));
            for d in docs {
                if out.len() >= limit {
                    break 'outer;
                }
                out.push(self.corpus.row(*d));
            }
            if out.len() >= limit {
                break;
            }
        }
        out
    }
}

/// Serializable training progress: enough to resume bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: SaeParams,
    pub optimizer: SaeOptimizer,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

const INIT_SAMPLE: usize = 4096;
const INIT_STREAM: u64 = 1;
const SAMPLING_STREAM: u64 = 2;

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub struct Trainer<'a> {
    data: TrainingSet<'a>,
    state: TrainState,
    schedule: CosineSchedule,
    steps_per_epoch: usize,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Trainer<'a> {
    pub fn new(data: TrainingSet<'a>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let sample = data.init_sample(INIT_SAMPLE);
        let params = SaeParams::init(data.dim(), config.latent_dim, config.k, &sample, &mut rng)?;
        let optimizer = SaeOptimizer::new(&params);
        Self::resume(
            data,
            TrainState {
                params,
                optimizer,
                config,
                epoch: 0,
            },
        )
    }

    pub fn resume(data: TrainingSet<'a>, state: TrainState) -> Result<Self> {
        state.config.validate()?;
        if state.params.input_dim() != data.dim() {
            return Err(Error::dim(data.dim(), state.params.input_dim(), "checkpoint input dimension"));
        }
        let steps_per_epoch = data.len().div_ceil(state.config.batch_size);
        let total = (state.config.epochs * steps_per_epoch).max(1) as u64;
        let schedule = CosineSchedule::new(state.config.initial_lr, state.config.min_lr, total)?;
        let pool = if state.config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(state.config.threads)
                    .build()
                    .map_err(|e| Error::invalid(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Trainer {
            data,
            state,
            schedule,
            steps_per_epoch,
            pool,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn params(&self) -> &SaeParams {
        &self.state.params
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.state.config.epochs
    }

    /// Runs one epoch of shuffled query batches.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let cfg = self.state.config.clone();
        let epoch = self.state.epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch));
        rng.set_stream(SAMPLING_STREAM);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut rng);

        let mut hits = vec![0u32; cfg.latent_dim];
        let (mut mse, mut kld, mut total) = (0.0, 0.0, 0.0);
        let mut lr = cfg.initial_lr;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<BatchQuery<'_>> = chunk
                .iter()
                .map(|&e| {
                    let (q, docs) = &self.data.examples[e];
                    let take = docs.len().min(cfg.positives_per_query);
                    let mut picked: Vec<usize> = sample_indices(&mut rng, docs.len(), take).into_vec();
                    picked.sort_unstable();
                    BatchQuery {
                        query: self.data.queries.row(*q),
                        positives: picked.iter().map(|&i| self.data.corpus.row(docs[i])).collect(),
                    }
                })
                .collect();
            let params = &self.state.params;
            let (loss, grads, batch_hits) = match &self.pool {
                Some(pool) => pool.install(|| batch_loss(params, &batch, cfg.kld_weight, true))?,
                None => batch_loss(params, &batch, cfg.kld_weight, false)?,
            };
            let step = (epoch * self.steps_per_epoch + b) as u64;
            lr = cosine_lr(&self.schedule, step.min(self.schedule.total_steps))?;
            if lr > 0.0 {
                self.state.optimizer.step(&mut self.state.params, &grads, lr)?;
            }
            if !self.state.params.is_finite() {
                return Err(Error::invalid(format!("parameters diverged at epoch {epoch}")));
            }
            for (h, o) in hits.iter_mut().zip(&batch_hits) {
                *h += o;
            }
            mse += loss.mse;
            kld += loss.kld;
            total += loss.total;
            batches += 1;
        }
        self.state.epoch += 1;
        let n = batches.max(1) as f64;
        Ok(EpochRecord {
            epoch: epoch + 1,
            mse: mse / n,
            kld: kld / n,
            total: total / n,
            dead_latents: hits.iter().filter(|h| **h == 0).count(),
            lr,
        })
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<TrainReport> {
        let mut report = TrainReport {
            kld_weight: self.state.config.kld_weight,
            records: Vec::new(),
            queries_without_positives: self.data.examples.iter().filter(|(_, d)| d.is_empty()).count(),
        };
        while !self.is_finished() {
            let rec = self.run_epoch()?;
            log::debug!(
                "epoch {} mse {:.3e} kld {:.3e} dead {}",
                rec.epoch,
                rec.mse,
                rec.kld,
                rec.dead_latents
            );
            report.records.push(rec);
        }
        Ok(report)
    }
}

/// Trains an SAE from scratch on the query/positive pairs of `qrels`.
pub fn train(
    queries: &EmbeddingStore,
    corpus: &EmbeddingStore,
    qrels: &QrelSet,
    config: &TrainConfig,
) -> Result<(SaeParams, TrainReport)> {
    let data = TrainingSet::new(queries, corpus, qrels)?;
    let mut trainer = Trainer::new(data, config.clone())?;
    let report = trainer.run()?;
    Ok((trainer.into_state().params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StoreKind;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        let (l, g) = mse_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g, vec![1.0, 1.0]);
        assert!(mse_loss(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(positive_softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = positive_softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let a = positive_softmax(&[0.3, -1.2, 4.0]).unwrap();
        let b = positive_softmax(&[10.3, 8.8, 14.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(positive_softmax(&[]).is_err());
    }

    #[test]
    fn kld_closed_form() {
        let (l, _) = kld_from_scores(&[0.0, 0.0], &[2f64.ln(), 0.0]).unwrap();
        assert!((l - 0.5 * (9.0f64 / 8.0).ln()).abs() < 1e-12);
        let (z, g) = kld_from_scores(&[0.4, 1.0], &[0.4, 1.0]).unwrap();
        assert_eq!(z, 0.0);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn kld_loss_shapes() {
        let q = [1.0, 0.0];
        let d1 = [1.0, 1.0];
        assert!(kld_loss(&q, &[], &q, &[]).is_err());
        assert!(kld_loss(&q, &[&d1], &q, &[&[1.0][..]]).is_err());
        let out = kld_loss(&q, &[&d1], &q, &[&d1]).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn empty_qrels_rejected() {
        let s = EmbeddingStore::new(2, StoreKind::Query);
        let c = EmbeddingStore::new(2, StoreKind::Document);
        assert!(matches!(
            train(&s, &c, &QrelSet::new(), &TrainConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let q = EmbeddingStore::from_rows(2, StoreKind::Query, [("q", vec![1.0, 0.0])]).unwrap();
        let c = EmbeddingStore::from_rows(2, StoreKind::Document, [("d", vec![0.0, 1.0])]).unwrap();
        let mut qr = QrelSet::new();
        qr.insert("q", "d", 1);
        let cfg = TrainConfig {
            epochs: 0,
            k: 1,
            latent_dim: 4,
            ..TrainConfig::default()
        };
        let (params, report) = train(&q, &c, &qr, &cfg).unwrap();
        assert!(report.records.is_empty());
        assert_eq!(params.b_dec(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_positive_query_counts_for_mse_only() {
        let q = EmbeddingStore::from_rows(2, StoreKind::Query, [("q", vec![1.0, 0.0])]).unwrap();
        let c = EmbeddingStore::from_rows(2, StoreKind::Document, [("d", vec![0.0, 1.0])]).unwrap();
        let mut qr = QrelSet::new();
        qr.insert("q", "d", 0);
        let cfg = TrainConfig {
            epochs: 2,
            k: 1,
            latent_dim: 3,
            ..TrainConfig::default()
        };
        let (_, report) = train(&q, &c, &qr, &cfg).unwrap();
        assert_eq!(report.queries_without_positives, 1);
        assert!(report.records.iter().all(|r| r.kld == 0.0 && r.mse.is_finite()));
    }
}
