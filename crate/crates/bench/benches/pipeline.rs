use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use seqlpd::features::local_features;
use seqlpd::net::{baseline_descriptor, random_weights};
use seqlpd::seqmatch::{difference_matrix, sequence_search};
use seqlpd::{detect_loop, MatchParams, NetConfig, Network, SpatialIndex};
use seqlpd_bench::{clustered_loop, submap, K_LOCAL};

fn knn(c: &mut Criterion) {
    let (sub, _) = submap(1);
    c.bench_function("spatial index build 4096", |b| {
        b.iter(|| SpatialIndex::new(black_box(&sub.points)))
    });
    let index = SpatialIndex::new(&sub.points);
    c.bench_function("knn k=20 x 4096 queries", |b| {
        b.iter(|| {
            for &p in &sub.points {
                black_box(index.knn(p, K_LOCAL).unwrap());
            }
        })
    });
}

fn features(c: &mut Criterion) {
    let (sub, _) = submap(2);
    c.bench_function("local features 4096", |b| {
        b.iter(|| local_features(black_box(&sub), K_LOCAL).unwrap())
    });
}

fn describe(c: &mut Criterion) {
    let (sub, lf) = submap(3);
    c.bench_function("describe baseline", |b| {
        b.iter(|| baseline_descriptor(black_box(&sub), &lf).unwrap())
    });
    let mut group = c.benchmark_group("describe network");
    group.sample_size(10);
    for (name, config) in [("compact", NetConfig::compact()), ("default", NetConfig::default())] {
        let net = Network::new(config.clone(), random_weights(&config, 1).unwrap()).unwrap();
        group.bench_function(name, |b| b.iter(|| net.describe(black_box(&sub), &lf).unwrap()));
    }
    group.finish();
}

fn matching(c: &mut Criterion) {
    let (lp, skf) = clustered_loop(2000, 4);
    let queries = lp.query_descriptors();
    let params = MatchParams::default();
    let window = &queries[1000 - params.window..1000];
    let m = difference_matrix(window, &lp.map.descriptors()).unwrap();
    c.bench_function("sequence search 10x2000", |b| {
        b.iter(|| sequence_search(black_box(&m), &params).unwrap())
    });
    c.bench_function("detect loop, 2000-frame map", |b| {
        b.iter_batched(
            || window.to_vec(),
            |w| detect_loop(&w, &lp.map, &skf, &params).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, knn, features, describe, matching);
criterion_main!(benches);
