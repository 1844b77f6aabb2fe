use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hrnn_bench::{random_rankings, synthetic_dataset};
use hrnn_core::baselines::{borda_fuse, ClickStore, PClick};
use hrnn_core::evaluation::{
    average_precision, count_improved, evaluate, inverse_pairs_of, reciprocal_rank, OriginalRanking,
};

fn per_query(c: &mut Criterion) {
    let rankings = random_rankings(1000, 20, 1);
    c.bench_function("ap_mrr/1000x20", |b| {
        b.iter(|| {
            rankings
                .iter()
                .map(|(r, rel, _)| average_precision(r, rel) + reciprocal_rank(r, rel))
                .sum::<f64>()
        })
    });
    c.bench_function("inverse_pairs/1000x20", |b| {
        b.iter(|| {
            rankings
                .iter()
                .map(|(r, _, clicked)| count_improved(&inverse_pairs_of(clicked), r).0)
                .sum::<usize>()
        })
    });
    c.bench_function("borda/1000x20", |b| {
        b.iter(|| {
            for (r, _, _) in &rankings {
                let original: Vec<usize> = (0..r.len()).collect();
                black_box(borda_fuse(&original, r).unwrap());
            }
        })
    });
}

fn whole_split(c: &mut Criterion) {
    let data = synthetic_dataset(50, 2);
    let pclick = PClick::new(ClickStore::from_dataset(&data));
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(20);
    group.bench_function("original", |b| b.iter(|| black_box(evaluate(&data, &OriginalRanking).report)));
    group.bench_function("p-click", |b| b.iter(|| black_box(evaluate(&data, &pclick).report)));
    group.bench_function("click_store", |b| b.iter(|| black_box(ClickStore::from_dataset(&data))));
    group.finish();
}

criterion_group!(benches, per_query, whole_split);
criterion_main!(benches);
