use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use smmt_bench::fixture;
use smmt_core::attention::{cluster_sparse_attention, dense_attention, SparseAttentionFlags};
use smmt_core::clustering::{choose_cluster_count, kmeans_fit, KMeansConfig};

const D_K: usize = 64;

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    group.sample_size(10);
    for n in [256usize, 512, 1024, 2048] {
        let (q, k, v) = (fixture(n, D_K, 1), fixture(n, D_K, 2), fixture(n, D_K, 3));
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("dense", n), &n, |b, _| {
            b.iter(|| dense_attention(black_box(&q), black_box(&k), black_box(&v)).unwrap())
        });
        // Clustering is part of the sparse cost, so it runs inside the loop.
        group.bench_with_input(BenchmarkId::new("sparse", n), &n, |b, &n| {
            b.iter(|| {
                let ca = kmeans_fit(black_box(&q), &KMeansConfig::new(choose_cluster_count(n).unwrap())).unwrap();
                cluster_sparse_attention(&q, &k, &v, &ca, SparseAttentionFlags::default()).unwrap()
            })
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans");
    group.sample_size(10);
    for n in [256usize, 1024, 4096] {
        let q = fixture(n, D_K, 4);
        let cfg = KMeansConfig::new(choose_cluster_count(n).unwrap());
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| kmeans_fit(black_box(&q), &cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, attention, clustering);
criterion_main!(benches);
