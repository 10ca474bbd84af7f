use std::hint::black_box;

use apr_core::agents::dp::solve_dp;
use apr_core::agents::{self, MapFinal, Paired, RandomSampler};
use apr_core::bayes::BeliefTracker;
use apr_core::fit::{self, FitConfig, Prepared};
use apr_core::mech::{self, MechParams};
use apr_core::{fixtures, TaskConfig};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn dp(c: &mut Criterion) {
    let task = TaskConfig::default();
    let mut g = c.benchmark_group("dp");
    g.sample_size(10);
    g.bench_function("solve_full_task", |b| b.iter(|| solve_dp(black_box(&task)).unwrap()));
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let task = TaskConfig::default();
    let params = fixtures::humans_base().normalized();
    let mut g = c.benchmark_group("simulate");
    g.bench_function("mech_1000_games", |b| b.iter(|| mech::simulate(black_box(&params), &task, 1000).unwrap()));
    g.bench_function("random_map_1000_games", |b| {
        b.iter(|| agents::play_games(&task, 1000, || Paired::new(RandomSampler, MapFinal), "base"))
    });
    g.finish();
}

fn belief(c: &mut Criterion) {
    let task = TaskConfig::default();
    let data = mech::simulate(&fixtures::humans_base().normalized(), &task, 200).unwrap();
    c.bench_function("belief/replay_200_games", |b| {
        b.iter(|| {
            for t in &data {
                let mut tracker = BeliefTracker::new(&task);
                for (arm, outcome) in t.evidence() {
                    tracker.update(arm, outcome).unwrap();
                }
                black_box(tracker.state());
            }
        })
    });
}

fn likelihood(c: &mut Criterion) {
    let task = TaskConfig::default();
    let data = mech::simulate(&fixtures::humans_base().normalized(), &task, 2000).unwrap();
    let prepared = Prepared::new(&data, &task).unwrap();
    let cfg = FitConfig::default();
    let x = fit::to_unconstrained(&MechParams::neutral(4));
    let mut g = c.benchmark_group("fit");
    g.bench_function("objective_and_gradient_2000_games", |b| {
        b.iter(|| fit::objective(black_box(&prepared), black_box(&x), &cfg))
    });
    g.sample_size(10);
    g.bench_function("fit_2000_games_2_starts", |b| {
        b.iter_batched(
            || FitConfig { n_starts: 2, train_fraction: None, ..FitConfig::default() },
            |cfg| fit::fit(&data, &task, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, dp, simulation, belief, likelihood);
criterion_main!(benches);
