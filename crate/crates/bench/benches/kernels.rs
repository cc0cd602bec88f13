use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use pilotroute::kmeans::kmeans;
use pilotroute::routers::route_pilot;
use pilotroute::{similarity, top_k, Embedding, SimilarityMetric};
use pilotroute_bench::{random_library, random_set, random_vec};

fn bench_similarity(c: &mut Criterion) {
    let mut g = c.benchmark_group("similarity");
    for dim in [64, 768] {
        let a = random_vec(1, "a", dim);
        let b = random_vec(1, "b", dim);
        for metric in [SimilarityMetric::Ip, SimilarityMetric::Cos] {
            g.bench_with_input(BenchmarkId::new(metric.as_str(), dim), &dim, |bch, _| {
                bch.iter(|| similarity(black_box(&a), black_box(&b), metric).unwrap())
            });
        }
    }
    g.finish();
}

fn bench_top_k(c: &mut Criterion) {
    let mut g = c.benchmark_group("top_k");
    for n in [1_000, 10_000, 50_000] {
        let corpus = random_set(2, n, 64);
        let q = random_vec(2, "query", 64);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| {
            bch.iter(|| top_k(black_box(&q), &corpus, 10, SimilarityMetric::Ip).unwrap())
        });
    }
    g.finish();
}

fn bench_route_pilot(c: &mut Criterion) {
    let mut g = c.benchmark_group("route_pilot");
    for t in [4, 8, 16] {
        let lib = random_library(3, t, 768, SimilarityMetric::Cos);
        let q = Embedding::new("q", random_vec(3, "query", 768));
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |bch, _| {
            bch.iter(|| route_pilot(black_box(&q), &lib).unwrap())
        });
    }
    g.finish();
}

fn bench_kmeans(c: &mut Criterion) {
    let mut g = c.benchmark_group("kmeans");
    g.sample_size(20);
    let set = random_set(4, 2_000, 64);
    let points: Vec<&[f32]> = set.records().iter().map(|e| e.vec.as_slice()).collect();
    for k in [1, 4, 16] {
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |bch, &k| {
            bch.iter(|| kmeans(black_box(&points), k, 10).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_similarity, bench_top_k, bench_route_pilot, bench_kmeans);
criterion_main!(benches);
