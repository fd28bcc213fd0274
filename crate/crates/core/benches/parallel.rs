//! One worker thread against every available core (at least two) on the hot loops.
//! In a `--no-default-features` build both variants run sequentially.

use std::hint::black_box;
use std::thread::available_parallelism;

use contea::encoder::{encode_all, init_parameters, FrozenMask, Gradients};
use contea::kg_store::PairGraph;
use contea::objectives::{gradient, Batch, Objective};
use contea::par;
use contea::snapgen::{generate, GenSpec};
use contea::RunConfig;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn hot_loops(c: &mut Criterion) {
    let spec = GenSpec {
        n_entities: 500,
        overlap_ratio: 0.8,
        structural_noise: 0.1,
        n_snapshots: 1,
        ..GenSpec::default()
    };
    let (pair, links) = generate(&spec).unwrap().remove(0);
    let cfg = RunConfig::default();
    let mut state = init_parameters(&pair, &cfg, 7).unwrap();
    state.frozen = FrozenMask::all_learnable(pair.num_entities());
    let graph = PairGraph::new(&pair);
    let batch = Batch::new(links.seed.clone());
    let all = available_parallelism().map(|n| n.get()).unwrap_or(1).max(2);

    let mut group = c.benchmark_group("hot_loops");
    group.sample_size(10);
    for threads in [1, all] {
        group.bench_with_input(BenchmarkId::new("encode_all", threads), &threads, |b, &n| {
            b.iter(|| par::with_threads(n, || black_box(encode_all(&state, &pair).unwrap())))
        });
        group.bench_with_input(BenchmarkId::new("gradient", threads), &threads, |b, &n| {
            let mut grads = Gradients::zeros_like(&state);
            b.iter(|| {
                par::with_threads(n, || {
                    gradient(Objective::Initial(&batch), &state, &graph, &cfg, &mut grads).unwrap();
                });
                black_box(&grads);
            })
        });
    }
    group.finish();
}

criterion_group!(benches, hot_loops);
criterion_main!(benches);
