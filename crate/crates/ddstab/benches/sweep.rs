//! Compares the rayon-backed sweep fan-out against the sequential fallback
//! on a batch of short closed-loop runs, the workload sweeps are made of.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use ddstab::{parallel, scenarios, simloop};

fn seed_batch() -> Vec<u64> {
    (0..16).collect()
}

fn run_one(seed: u64) -> f64 {
    let plant = scenarios::plant("drone-emulated").unwrap();
    let mut cfg = scenarios::preset("drone-emulated").unwrap();
    cfg.horizon = 0.5;
    cfg.setpoints.clear();
    cfg.z0 = vec![0.5, 0.0];
    cfg.noise.seed = seed;
    let trace = simloop::run(&plant, &cfg).unwrap();
    trace.records.last().unwrap().z[0]
}

fn bench_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("seed_sweep_16_runs");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter_batched(seed_batch, |seeds| parallel::map(seeds, run_one), BatchSize::SmallInput)
    });
    group.bench_function("sequential", |b| {
        b.iter_batched(seed_batch, |seeds| parallel::map_seq(seeds, run_one), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, bench_sweep);
criterion_main!(benches);
