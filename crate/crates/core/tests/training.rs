mod common;

use common::*;
use saeir::io::{decode_checkpoint, encode_checkpoint, Checkpoint};
use saeir::synth::{generate_synthetic, SynthConfig};
use saeir::training::{combined_loss, mse_loss, train, BatchQuery, TrainConfig, Trainer, TrainingSet};
use saeir::Matrix;

fn small_bench(seed: u64) -> saeir::synth::SyntheticBenchmark {
    generate_synthetic(&SynthConfig {
        seed,
        n_queries: 64,
        n_distractors: 200,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs: 12,
        positives_per_query: 4,
        latent_dim: 128,
        k: 8,
        threads: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn backward_matches_finite_differences_of_linear_probe() {
    let mut r = rng(3);
    for _ in 0..20 {
        let p = random_params(&mut r, 5, 9, 3);
        let x = gaussian_vec(&mut r, 5, 1.0);
        let g = gaussian_vec(&mut r, 5, 1.0);
        let h = p.encode(&x).unwrap();
        let support: Vec<usize> = h.entries().iter().map(|e| e.0).collect();
        let (grads, _) = p.backward(&x, &h, &g).unwrap();
        let raw = RawParams::of(&p);
        let probe = |raw: &RawParams| raw.reconstruct(&x, &support).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        for t in 0..4 {
            for i in 0..raw.tensors[t].len() {
                let (mut plus, mut minus) = (raw.clone(), raw.clone());
                plus.tensors[t][i] += 1e-5;
                minus.tensors[t][i] -= 1e-5;
                let fd = (probe(&plus) - probe(&minus)) / 2e-5;
                let a = grads.tensors()[t][i];
                assert!((fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-6), "tensor {t} entry {i}: {fd} vs {a}");
            }
        }
    }
}

#[test]
fn lambda_zero_is_the_mse_objective() {
    let mut r = rng(4);
    let p = random_params(&mut r, 4, 8, 2);
    let data: Vec<(Vec<f64>, Vec<Vec<f64>>)> =
        (0..3).map(|_| (gaussian_vec(&mut r, 4, 1.0), (0..2).map(|_| gaussian_vec(&mut r, 4, 1.0)).collect())).collect();
    let batch: Vec<BatchQuery<'_>> = data
        .iter()
        .map(|(q, ps)| BatchQuery {
            query: q,
            positives: ps.iter().map(|v| &v[..]).collect(),
        })
        .collect();
    let (loss, _) = combined_loss(&p, &batch, 0.0).unwrap();
    let mut sum = 0.0;
    for (q, ps) in &data {
        for x in std::iter::once(q).chain(ps) {
            sum += mse_loss(x, &p.reconstruct(x).unwrap().1).unwrap().0;
        }
    }
    assert!((loss.total - sum / 9.0).abs() < 1e-14);
    assert!(loss.kld > 0.0, "KLD is still reported with lambda = 0");
    assert!(max_fd_error(&p, &batch, 0.0, combined_loss(&p, &batch, 0.0).unwrap().1.tensors(), 1e-5) <= 1e-4);
}

#[test]
fn perfect_reconstruction_has_zero_loss() {
    let eye = Matrix::from_vec(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let p = saeir::SaeParams::new(eye.clone(), vec![0.0; 3], eye, vec![0.0; 3], 3).unwrap();
    let (q, d1, d2) = ([0.5, -1.0, 2.0], [1.0, 1.0, 0.0], [0.0, -3.0, 0.25]);
    let batch = [BatchQuery {
        query: &q,
        positives: vec![&d1, &d2],
    }];
    let (loss, grads) = combined_loss(&p, &batch, 1.0).unwrap();
    assert_eq!(loss.total, 0.0);
    assert_eq!(grads.max_abs(), 0.0);
}

#[test]
fn loss_decreases_over_the_first_epochs() {
    let b = small_bench(1);
    let (_, report) = train(&b.queries, &b.corpus, &b.qrels, &small_config()).unwrap();
    let first = report.records[0].total;
    let tenth = report.records[9].total;
    assert!(tenth < first, "total loss {first} -> {tenth}");
    assert!(report.records.iter().all(|r| r.mse.is_finite() && r.kld >= -1e-12));
}

#[test]
fn identical_seeds_give_identical_reports() {
    let b = small_bench(2);
    let (p1, r1) = train(&b.queries, &b.corpus, &b.qrels, &small_config()).unwrap();
    let (p2, r2) = train(&b.queries, &b.corpus, &b.qrels, &small_config()).unwrap();
    assert_eq!(r1.to_jsonl(), r2.to_jsonl());
    assert_eq!(p1, p2);
    let other = TrainConfig {
        seed: 9,
        ..small_config()
    };
    let (_, r3) = train(&b.queries, &b.corpus, &b.qrels, &other).unwrap();
    assert_ne!(r1.to_jsonl(), r3.to_jsonl());
}

#[test]
fn resumed_training_continues_identically() {
    let b = small_bench(3);
    let cfg = small_config();
    let (full_params, full) = train(&b.queries, &b.corpus, &b.qrels, &cfg).unwrap();

    let data = TrainingSet::new(&b.queries, &b.corpus, &b.qrels).unwrap();
    let mut t = Trainer::new(data, cfg.clone()).unwrap();
    let mut records = Vec::new();
    for _ in 0..5 {
        records.push(t.run_epoch().unwrap());
    }
    let bytes = encode_checkpoint(&Checkpoint::from_state(t.state())).unwrap();
    drop(t);
    let state = decode_checkpoint(&bytes).unwrap().into_train_state().unwrap();
    assert_eq!(state.epoch, 5);
    let data = TrainingSet::new(&b.queries, &b.corpus, &b.qrels).unwrap();
    let mut t = Trainer::resume(data, state).unwrap();
    records.extend(t.run().unwrap().records);
    assert_eq!(records, full.records);
    assert_eq!(t.into_state().params, full_params);
}

#[test]
fn thread_count_does_not_change_results() {
    let b = small_bench(4);
    let one = train(&b.queries, &b.corpus, &b.qrels, &small_config()).unwrap();
    let cfg = TrainConfig {
        threads: 3,
        batch_size: 64,
        ..small_config()
    };
    let single = TrainConfig {
        threads: 1,
        batch_size: 64,
        ..small_config()
    };
    let many = train(&b.queries, &b.corpus, &b.qrels, &cfg).unwrap();
    let same = train(&b.queries, &b.corpus, &b.qrels, &single).unwrap();
    assert_eq!(many, same);
    assert_ne!(one.1, many.1);
}

#[test]
fn zero_epochs_keep_initialization() {
    let b = small_bench(5);
    let cfg = TrainConfig {
        epochs: 0,
        ..small_config()
    };
    let (p, report) = train(&b.queries, &b.corpus, &b.qrels, &cfg).unwrap();
    assert!(report.records.is_empty());
    let data = TrainingSet::new(&b.queries, &b.corpus, &b.qrels).unwrap();
    assert_eq!(&p, Trainer::new(data, cfg).unwrap().params());
    let mut r = rng(1);
    let x = gaussian_vec(&mut r, 64, 0.1);
    assert_eq!(p.encode(&x).unwrap().nnz(), 8);
}
