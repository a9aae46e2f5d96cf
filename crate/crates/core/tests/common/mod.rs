#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use saeir::retrieval::RankedList;
use saeir::training::BatchQuery;
use saeir::{Matrix, QrelSet, SaeParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_params(rng: &mut ChaCha8Rng, d: usize, n: usize, k: usize) -> SaeParams {
    SaeParams::new(
        Matrix::from_vec(n, d, gaussian_vec(rng, n * d, 0.5)).unwrap(),
        gaussian_vec(rng, n, 0.1),
        Matrix::from_vec(n, d, gaussian_vec(rng, n * d, 0.5)).unwrap(),
        gaussian_vec(rng, d, 0.1),
        k,
    )
    .unwrap()
}

/// Flat copies of the four parameter tensors: w_enc (n×d), b_enc, w_dec (n×d, row = column j), b_dec.
#[derive(Clone)]
pub struct RawParams {
    pub d: usize,
    pub n: usize,
    pub tensors: [Vec<f64>; 4],
}

impl RawParams {
    pub fn of(p: &SaeParams) -> Self {
        RawParams {
            d: p.input_dim(),
            n: p.latent_dim(),
            tensors: [
                p.w_enc().as_slice().to_vec(),
                p.b_enc().to_vec(),
                p.w_dec_columns().as_slice().to_vec(),
                p.b_dec().to_vec(),
            ],
        }
    }

    /// Reconstruction with a given support, written out longhand.
    pub fn reconstruct(&self, x: &[f64], support: &[usize]) -> Vec<f64> {
        let [we, be, wd, bd] = &self.tensors;
        let mut out = bd.clone();
        for &j in support {
            let mut h = be[j];
            for i in 0..self.d {
                h += we[j * self.d + i] * (x[i] - bd[i]);
            }
            for i in 0..self.d {
                out[i] += h * wd[j * self.d + i];
            }
        }
        out
    }
}

pub fn naive_kl(s: &[f64], s_hat: &[f64]) -> f64 {
    let soft = |v: &[f64]| {
        let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect::<Vec<_>>()
    };
    let (p, q) = (soft(s), soft(s_hat));
    p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum()
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Batch objective with every TopK support frozen to `supports` (query
/// first, then its positives, per batch item).
pub fn fixed_mask_objective(raw: &RawParams, batch: &[BatchQuery<'_>], supports: &[Vec<Vec<usize>>], lambda: f64) -> f64 {
    let (mut mse_sum, mut count, mut kl_sum, mut kl_n) = (0.0, 0usize, 0.0, 0usize);
    for (item, sup) in batch.iter().zip(supports) {
        let qhat = raw.reconstruct(item.query, &sup[0]);
        let mut docs_hat = Vec::new();
        for (x, s) in std::iter::once(item.query).chain(item.positives.iter().copied()).zip(sup) {
            let xh = raw.reconstruct(x, s);
            mse_sum += x.iter().zip(&xh).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / raw.d as f64;
            count += 1;
            docs_hat.push(xh);
        }
        if !item.positives.is_empty() {
            let s: Vec<f64> = item.positives.iter().map(|p| dotp(item.query, p)).collect();
            let sh: Vec<f64> = docs_hat[1..].iter().map(|p| dotp(&qhat, p)).collect();
            kl_sum += naive_kl(&s, &sh);
            kl_n += 1;
        }
    }
    let kl = if kl_n > 0 { kl_sum / kl_n as f64 } else { 0.0 };
    mse_sum / count as f64 + lambda * kl
}

pub fn supports(params: &SaeParams, batch: &[BatchQuery<'_>]) -> Vec<Vec<Vec<usize>>> {
    batch
        .iter()
        .map(|b| {
            std::iter::once(b.query)
                .chain(b.positives.iter().copied())
                .map(|x| params.encode(x).unwrap().entries().iter().map(|e| e.0).collect())
                .collect()
        })
        .collect()
}

/// Largest elementwise relative error between central differences and
/// `analytic`, with an absolute floor for near-zero entries.
pub fn max_fd_error(
    params: &SaeParams,
    batch: &[BatchQuery<'_>],
    lambda: f64,
    analytic: [&[f64]; 4],
    step: f64,
) -> f64 {
    let raw = RawParams::of(params);
    let sup = supports(params, batch);
    let mut worst: f64 = 0.0;
    for t in 0..4 {
        for i in 0..raw.tensors[t].len() {
            let mut plus = raw.clone();
            plus.tensors[t][i] += step;
            let mut minus = raw.clone();
            minus.tensors[t][i] -= step;
            let fd = (fixed_mask_objective(&plus, batch, &sup, lambda) - fixed_mask_objective(&minus, batch, &sup, lambda))
                / (2.0 * step);
            let a = analytic[t][i];
            let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

/// Reciprocal rank at `cutoff`, scanning each list directly.
pub fn scan_mrr(runs: &[RankedList], qrels: &QrelSet, cutoff: usize) -> f64 {
    let mut total = 0.0;
    for r in runs {
        for (i, (d, _)) in r.results.iter().take(cutoff).enumerate() {
            if qrels.grade(&r.query_id, d).unwrap_or(0) >= 1 {
                total += 1.0 / (i + 1) as f64;
                break;
            }
        }
    }
    total / runs.len() as f64
}

pub fn scan_precision(runs: &[RankedList], qrels: &QrelSet, k: usize) -> f64 {
    let mut total = 0.0;
    for r in runs {
        let hits = r.results.iter().take(k).filter(|(d, _)| qrels.grade(&r.query_id, d).unwrap_or(0) >= 1).count();
        total += hits as f64 / k as f64;
    }
    total / runs.len() as f64
}

/// Mean recall over queries with at least one relevant document.
pub fn scan_recall(runs: &[RankedList], qrels: &QrelSet, k: usize) -> f64 {
    let (mut total, mut n) = (0.0, 0);
    for r in runs {
        let rel = qrels.relevant_count(&r.query_id);
        if rel == 0 {
            continue;
        }
        let hits = r.results.iter().take(k).filter(|(d, _)| qrels.grade(&r.query_id, d).unwrap_or(0) >= 1).count();
        total += hits as f64 / rel as f64;
        n += 1;
    }
    if n == 0 { 0.0 } else { total / n as f64 }
}
