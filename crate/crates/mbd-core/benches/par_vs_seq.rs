//! Parallel vs sequential execution of the embarrassingly parallel
//! workloads: the derivative-oracle suite and a step-size sweep of the
//! pendulum dynamics.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mbd_core::dynamics::{dynamics_run, DynamicsConfig};
use mbd_core::model::load_model;
use mbd_core::par;
use mbd_core::state::Formulation;
use mbd_core::verify;

fn models_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn bench_fdcheck(c: &mut Criterion) {
    let mut group = c.benchmark_group("fdcheck_suite");
    group.sample_size(10);
    let items = verify::standard_items();
    for reps in [10usize, 40] {
        group.bench_with_input(BenchmarkId::new("sequential", reps), &reps, |b, &reps| {
            b.iter(|| verify::run_items_seq(&items, 42, reps));
        });
        group.bench_with_input(BenchmarkId::new("parallel", reps), &reps, |b, &reps| {
            b.iter(|| verify::run_items_par(&items, 42, reps));
        });
    }
    group.finish();
}

fn bench_h_sweep(c: &mut Criterion) {
    let model = load_model(models_dir().join("single_pendulum.json")).unwrap();
    let hs = vec![2e-3, 1e-3, 5e-4, 2.5e-4];
    let run_one = |h: f64| {
        let cfg = DynamicsConfig::with_auto_theta(Formulation::Ra, h, 0.5);
        dynamics_run(&model, &cfg).unwrap().records.len()
    };

    let mut group = c.benchmark_group("pendulum_h_sweep");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| par::map_seq(hs.clone(), run_one));
    });
    group.bench_function("parallel", |b| {
        b.iter(|| par::map_par(hs.clone(), run_one));
    });
    group.finish();
}

criterion_group!(benches, bench_fdcheck, bench_h_sweep);
criterion_main!(benches);
