use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use secrel::pipeline::init_solution;
use secrel::power_speed::solve_power_speed_at;
use secrel::robust::worstcase_adv_gain;
use secrel::traj_accel::solve_traj_at;
use secrel::{BlockOptions, Point, ScenarioConfig};

fn cfg(n: usize) -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.slots = n;
    c.horizon = 2.0 * n as f64;
    c.bs_pos = Point::new(300.0, 60.0);
    c
}

fn blocks(c: &mut Criterion) {
    let mut g = c.benchmark_group("single solve");
    g.sample_size(10);
    for n in [10, 25, 50] {
        let cfg = cfg(n);
        let (t, p) = init_solution(&cfg).unwrap();
        let opts = BlockOptions::from_config(&cfg);
        let lambda = 5e-3;
        g.bench_with_input(BenchmarkId::new("power_speed", n), &n, |b, _| {
            b.iter(|| solve_power_speed_at(&t, &p, &cfg, black_box(lambda), &opts).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("traj_accel", n), &n, |b, _| {
            b.iter(|| solve_traj_at(&p, &t, &cfg, black_box(lambda), &opts).unwrap())
        });
    }
    g.finish();
}

fn worst_case_gain(c: &mut Criterion) {
    let cfg = ScenarioConfig::default();
    let adv = &cfg.adversaries[0];
    c.bench_function("worstcase_adv_gain", |b| {
        b.iter(|| worstcase_adv_gain(black_box(&Point::new(10.0, 20.0)), adv, &cfg))
    });
}

criterion_group!(benches, blocks, worst_case_gain);
criterion_main!(benches);
