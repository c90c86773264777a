use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gapscan::data::gen_uniform;
use gapscan::esa::EsaParams;
use gapscan::oracles::Multimodal;
use gapscan::strategies::esa_search;

fn esa_batch(c: &mut Criterion) {
    let ds = gen_uniform(&Multimodal::new(6), 500, 0).unwrap();
    let params = EsaParams::default();
    let mut group = c.benchmark_group("esa_batch_50");
    group.sample_size(10);
    for (label, parallelism) in [("sequential", 1), ("rayon", 0)] {
        group.bench_with_input(BenchmarkId::new(label, parallelism), &parallelism, |b, &p| {
            b.iter(|| esa_search(black_box(&ds), &params, 50, 1, p).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, esa_batch);
criterion_main!(benches);
