use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use crittree::crt::{sample_conditioned_excursion, ExcursionConfig};
use crittree::mmspace::ball_mass;
use crittree::rng::stream;
use crittree::{builtin, compute_martingales, explore, simulate_tree, SimConfig, SparseTable, Tree};
use rand::Rng;

/// First tree with at least `min` particles, cut at a length budget.
fn big_tree(model: &crittree::ModelSpec, min: usize) -> Tree {
    (0..)
        .map(|seed| {
            let cfg = SimConfig { length_budget: Some(2e4), seed, ..SimConfig::default() };
            simulate_tree(model, 0, &cfg).unwrap()
        })
        .find(|t| t.len() >= min)
        .unwrap()
}

fn rmq(c: &mut Criterion) {
    let mut rng = stream(1, 0);
    let values: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
    c.bench_function("rmq/build_1e5", |b| b.iter(|| SparseTable::new(black_box(values.clone()))));
    let table = SparseTable::new(values);
    c.bench_function("rmq/query", |b| {
        b.iter_batched(
            || {
                let i = rng.random_range(0..100_000);
                let j = rng.random_range(0..100_000);
                (i.min(j), i.max(j))
            },
            |(lo, hi)| table.argmin(lo, hi),
            BatchSize::SmallInput,
        )
    });
}

fn simulate(c: &mut Criterion) {
    for name in ["binary", "two-type", "torus"] {
        let m = builtin(name, 1.0).unwrap();
        let mut seed = 0;
        c.bench_function(&format!("simulate/{name}_budget_1e3"), |b| {
            b.iter(|| {
                seed += 1;
                let cfg = SimConfig { length_budget: Some(1e3), seed, ..SimConfig::default() };
                simulate_tree(&m, 0, &cfg).unwrap()
            })
        });
    }
}

fn exploration(c: &mut Criterion) {
    let m = builtin("two-type", 1.0).unwrap();
    let tree = big_tree(&m, 10_000);
    c.bench_function("explore/10k", |b| b.iter(|| explore(black_box(&tree))));
    let path = explore(&tree);
    c.bench_function("martingale/10k", |b| b.iter(|| compute_martingales(&path, &m)));
    let len = path.length();
    let mut rng = stream(2, 0);
    c.bench_function("tree_distance/10k", |b| {
        b.iter_batched(
            || (rng.random::<f64>() * len, rng.random::<f64>() * len),
            |(s, t)| path.tree_distance(s, t).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("ball_mass/10k", |b| {
        b.iter_batched(|| rng.random::<f64>() * len, |s| ball_mass(&path, s, 2.0).unwrap(), BatchSize::SmallInput)
    });
}

fn excursion(c: &mut Criterion) {
    let cfg = ExcursionConfig { dt: 1e-3, ..ExcursionConfig::new(1.0, 1.0) };
    let mut rng = stream(3, 0);
    c.bench_function("crt/conditioned_excursion", |b| b.iter(|| sample_conditioned_excursion(&cfg, &mut rng)));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = rmq, simulate, exploration, excursion
}
criterion_main!(benches);
