use criterion::{criterion_group, criterion_main, Criterion};
use ddsc_core::sim::scenario::{find_initialization, run_with_initialization, ScenarioConfig};
use std::hint::black_box;

fn bench_scenario(c: &mut Criterion) {
    let mut g = c.benchmark_group("closed_loop");
    g.sample_size(10);
    for k in 1..=4 {
        let cfg = ScenarioConfig::benchmark(k);
        let modes = cfg.modes().unwrap();
        let init =
            find_initialization(&modes, cfg.init_length, cfg.excitation, cfg.q, cfg.lambda, cfg.seeds.init, 1).unwrap();
        g.bench_function(format!("benchmark_{k}"), |b| {
            b.iter(|| run_with_initialization(black_box(&cfg), init.clone()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_scenario);
criterion_main!(benches);
