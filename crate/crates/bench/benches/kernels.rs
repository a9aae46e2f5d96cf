use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use saeir::control::amplify;
use saeir::retrieval::{build_inverted_index, dense_retrieve, reconstruct_store, sparse_retrieve_all};
use saeir::training::{combined_loss, BatchQuery};
use saeir_bench::fixture;
use std::hint::black_box;

fn encode(c: &mut Criterion) {
    let mut g = c.benchmark_group("encode");
    for k in [4, 32] {
        let f = fixture(k);
        let x = f.bench.queries.row(0).to_vec();
        g.bench_function(format!("single_k{k}"), |b| b.iter(|| f.params.encode(black_box(&x)).unwrap()));
    }
    let f = fixture(32);
    let m = f.bench.corpus.to_matrix();
    g.throughput(Throughput::Elements(f.bench.corpus.len() as u64));
    g.bench_function("corpus_k32", |b| b.iter(|| f.params.encode_batch(black_box(&m)).unwrap()));
    g.finish();
}

fn retrieval(c: &mut Criterion) {
    let f = fixture(32);
    let (q_lat, _) = reconstruct_store(&f.params, &f.bench.queries).unwrap();
    let (d_lat, _) = reconstruct_store(&f.params, &f.bench.corpus).unwrap();
    let index = build_inverted_index(f.bench.corpus.ids().iter().map(String::as_str).zip(&d_lat)).unwrap();
    let mut g = c.benchmark_group("retrieve");
    g.throughput(Throughput::Elements(f.bench.queries.len() as u64));
    g.bench_function("dense", |b| b.iter(|| dense_retrieve(&f.bench.queries, &f.bench.corpus, 10).unwrap()));
    g.bench_function("sparse", |b| {
        b.iter(|| sparse_retrieve_all(&index, f.bench.queries.ids(), black_box(&q_lat), 10).unwrap())
    });
    g.finish();
}

fn loss(c: &mut Criterion) {
    let f = fixture(32);
    let b = &f.bench;
    let batch: Vec<BatchQuery<'_>> = (0..64)
        .map(|row| BatchQuery {
            query: b.queries.row(row),
            positives: b.qrels.relevant(b.queries.id(row)).map(|d| b.corpus.get(d).unwrap()).collect(),
        })
        .collect();
    c.bench_function("combined_loss_64q", |bench| {
        bench.iter(|| combined_loss(&f.params, black_box(&batch), 1.0).unwrap())
    });
}

fn steer(c: &mut Criterion) {
    let f = fixture(32);
    let h = f.params.encode(f.bench.queries.row(0)).unwrap();
    c.bench_function("amplify_decode", |b| {
        b.iter_batched(
            || h.clone(),
            |h| f.params.decode(&amplify(&h, 17, 0.5).unwrap()).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, encode, retrieval, loss, steer);
criterion_main!(benches);
