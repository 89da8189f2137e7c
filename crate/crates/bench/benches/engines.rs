//! Stepping-rule and replication throughput.
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqweight_core::montecarlo::run_replication;
use seqweight_core::{gap_step, gi_step, GIConfig, GapConfig, ScenarioSpec, TrialState, WeightVector};

fn random_state(j: usize, seed: u64) -> TrialState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrialState::from_parts(100, (0..j).map(|_| rng.random_range(-10.0..10.0)).collect())
}

fn stepping(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for j in [100usize, 400, 2000] {
        let state = random_state(j, 1);
        let weights = WeightVector::ones(j).unwrap();
        let gap = GapConfig::calibrated(0.05, j / 10, weights.clone()).unwrap();
        let gi = GIConfig::calibrated(0.05, 0.05, j / 20, 3 * j / 20, weights).unwrap();
        group.bench_with_input(BenchmarkId::new("gap", j), &state, |b, s| b.iter(|| gap_step(black_box(s), &gap)));
        group.bench_with_input(BenchmarkId::new("gi", j), &state, |b, s| b.iter(|| gi_step(black_box(s), &gi)));
    }
    group.finish();
}

fn replication(c: &mut Criterion) {
    let mut group = c.benchmark_group("replication");
    group.sample_size(10);
    for (name, eta, r) in [("unweighted", 1.0, 1.0), ("informative", 20.0, 5.0)] {
        let spec = ScenarioSpec { eta, r, ..ScenarioSpec::gap(name, 200) };
        let mut rep = 0;
        group.bench_function(name, |b| {
            b.iter(|| {
                rep += 1;
                run_replication(&spec, rep).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, stepping, replication);
criterion_main!(benches);
