use criterion::{criterion_group, criterion_main, Criterion};
use gocleak_bench::{observed_estimator, reference};
use gocleak_core::{run_strategy, EpisodeConfig, PolicyKind, Scenario, Strategy};
use std::hint::black_box;

fn smoothing(c: &mut Criterion) {
    let est = observed_estimator(Scenario::Estimation, 50);
    let n = est.last_transmission() + 2;
    let mut group = c.benchmark_group("eve");
    for gap in [1usize, 5, 15] {
        group.bench_function(format!("leakage/D{gap}"), |b| b.iter(|| est.leakage(black_box(n), gap).unwrap()));
    }
    group.bench_function("observe", |b| {
        b.iter_batched(|| est.clone(), |mut e| e.observe(4).unwrap(), criterion::BatchSize::SmallInput)
    });
    group.finish();
}

fn episodes(c: &mut Criterion) {
    let mut group = c.benchmark_group("episode");
    group.sample_size(10);
    for kind in PolicyKind::ALL {
        let cfg = EpisodeConfig { policy_kind: kind, ..reference(Scenario::Estimation) };
        let strategy = Strategy::for_config(&cfg).unwrap();
        group.bench_function(format!("estimation/{kind}"), |b| {
            b.iter(|| run_strategy(&strategy, &cfg, black_box(7), 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, smoothing, episodes);
criterion_main!(benches);
