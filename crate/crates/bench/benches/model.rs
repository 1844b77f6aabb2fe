use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hrnn_bench::{query_fixture, synthetic_dataset};
use hrnn_core::autodiff::Tape;
use hrnn_core::hrnn::{Candidate, Model, ModelConfig, ModelVariant};
use hrnn_core::query_log::SessionRole;
use hrnn_core::ranker_training::{split_loss, train, SplitLoss, TrainConfig};

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("query");
    for variant in [ModelVariant::ShortTerm, ModelVariant::Hrnn, ModelVariant::HrnnQa] {
        let model = Model::new(ModelConfig::desk(variant), 1);
        let f = query_fixture(model.config.d_e, 15, 20, 2);
        let candidates: Vec<Candidate<'_>> = f
            .docs
            .iter()
            .zip(&f.features)
            .map(|(d, &features)| Candidate { doc: d, features })
            .collect();
        group.bench_function(format!("forward/{variant}"), |b| {
            b.iter(|| {
                let mut tape = Tape::new(&model.store);
                let g = model
                    .forward_query(&mut tape, &f.history, &f.prior, &f.query, &candidates)
                    .unwrap();
                black_box(tape.scalar(g.scores[0]))
            })
        });
        group.bench_function(format!("forward_backward/{variant}"), |b| {
            b.iter(|| {
                let mut tape = Tape::new(&model.store);
                let g = model
                    .forward_query(&mut tape, &f.history, &f.prior, &f.query, &candidates)
                    .unwrap();
                let terms: Vec<_> = (1..candidates.len())
                    .map(|j| tape.pair_loss(g.scores[0], g.scores[j], 1.0, 0.1))
                    .collect();
                let l = tape.add_all(&terms);
                black_box(tape.backward(l).unwrap())
            })
        });
    }
    group.finish();
}

fn epochs(c: &mut Criterion) {
    let data = synthetic_dataset(20, 3);
    let mut group = c.benchmark_group("epoch");
    group.sample_size(10);
    for variant in [ModelVariant::ShortTerm, ModelVariant::HrnnQa] {
        let cfg = ModelConfig::desk(variant);
        group.bench_function(format!("train/{variant}"), |b| {
            b.iter_batched(
                || Model::new(cfg, 4),
                |model| {
                    let tc = TrainConfig {
                        max_epochs: 1,
                        ..Default::default()
                    };
                    let mut val = SplitLoss {
                        data: &data,
                        role: SessionRole::Validation,
                    };
                    black_box(train(model, &data, &tc, &mut val, None).unwrap().report)
                },
                BatchSize::LargeInput,
            )
        });
        let model = Model::new(cfg, 4);
        group.bench_function(format!("score_train_split/{variant}"), |b| {
            b.iter(|| black_box(split_loss(&model, &data, SessionRole::Train)))
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward, epochs);
criterion_main!(benches);
