use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use iqvi_bench::{affine_box, example1, synthetic_pricing};
use iqvi_core::config;
use iqvi_core::*;

fn euler_example1(c: &mut Criterion) {
    let (p, u0) = example1();
    let sched = StepSchedule::fixed(0.00146).unwrap();
    let stop = StopCriteria::iterations(100);
    let mut group = c.benchmark_group("euler_example1_100");
    for fp in [FlowParams::fixed_time(20.0, 20.0, 0.95, 1.5).unwrap(), FlowParams::nominal(1.0).unwrap()] {
        group.bench_function(fp.label(), |b| b.iter(|| euler(&p, &fp, black_box(&u0), &sched, &stop).unwrap()));
    }
    group.finish();
}

fn residual_by_dimension(c: &mut Criterion) {
    let mut group = c.benchmark_group("residual");
    for n in [2, 10, 100] {
        let p = affine_box(n);
        let u = Vector::from_element(n, 0.3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &u, |b, u| b.iter(|| residual(&p, black_box(u)).unwrap()));
    }
    group.finish();
}

fn reference_integration(c: &mut Criterion) {
    let p = config::identity_1d().problem;
    let fp = FlowParams::fixed_time(1.0, 1.0, 0.5, 3.0).unwrap();
    let u0 = Vector::from_element(1, 10.0);
    c.bench_function("rk4_identity_fixed_time", |b| {
        b.iter(|| integrate_reference(&p, &fp, black_box(&u0), 1e-3, 3.0).unwrap())
    });
}

fn assignment(c: &mut Criterion) {
    let net = TrafficNetwork::synthetic();
    let od = ODMatrix::synthetic(&net);
    let mut group = c.benchmark_group("user_equilibrium_gap_1e-6");
    for variant in [FrankWolfeVariant::Classic, FrankWolfeVariant::Conjugate, FrankWolfeVariant::Biconjugate] {
        let s = UeSettings { gap_tol: 1e-6, max_iter: 100_000, variant };
        group.bench_function(format!("{variant:?}"), |b| {
            b.iter(|| user_equilibrium(&net, &od, black_box(&[1.0, 1.0, 1.0]), &s).unwrap())
        });
    }
    group.finish();
}

fn road_pricing(c: &mut Criterion) {
    let op = synthetic_pricing(1e-8);
    let fp = FlowParams::fixed_time(0.75, 0.75, 0.65, 1.5).unwrap();
    let sched = StepSchedule::harmonic(4.0).unwrap();
    let mut group = c.benchmark_group("road_pricing");
    group.sample_size(10);
    group.bench_function("synthetic_50_iterations", |b| {
        b.iter(|| solve_road_pricing(&op, &fp, &sched, 0.5, &Vector::zeros(3), &StopCriteria::iterations(50)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, euler_example1, residual_by_dimension, reference_integration, assignment, road_pricing);
criterion_main!(benches);
