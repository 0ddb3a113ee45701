use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nnmon_bench::{acc_input_box, acc_scenario};
use nnmon_core::envelope::{build_envelope, FunctionKind};
use nnmon_core::network::{acc_controller, an_bounds};
use nnmon_core::milp::output_interval;
use nnmon_core::scenario::config::MethodChoice;
use nnmon_core::scenario::run::simulate;
use nnmon_core::synthesis::synthesize;

fn bounding(c: &mut Criterion) {
    let net = acc_controller();
    let input = acc_input_box();
    c.bench_function("an_bounds_acc", |b| b.iter(|| an_bounds(black_box(&net), black_box(&input)).unwrap()));
    c.bench_function("milp_bounds_acc", |b| b.iter(|| output_interval(black_box(&net), black_box(&input)).unwrap()));
}

fn envelope(c: &mut Criterion) {
    let f = FunctionKind::Square.function();
    c.bench_function("envelope_square_h20", |b| b.iter(|| build_envelope(black_box(&f), (-20.0, 80.0), 20).unwrap()));
}

fn synthesis(c: &mut Criterion) {
    let prepared = acc_scenario(1, MethodChoice::An);
    let mut g = c.benchmark_group("synthesis");
    g.sample_size(10);
    g.bench_function("acc", |b| b.iter(|| synthesize(black_box(&prepared.model), 1e-6).unwrap()));
    g.finish();
}

fn observer(c: &mut Criterion) {
    let an = acc_scenario(50, MethodChoice::An);
    let op = acc_scenario(50, MethodChoice::Op);
    let cert = synthesize(&an.model, 1e-6).unwrap();
    let mut g = c.benchmark_group("simulate_50_steps");
    g.sample_size(20);
    g.bench_function("an", |b| b.iter(|| simulate(black_box(&an), &cert).unwrap()));
    g.bench_function("op", |b| b.iter(|| simulate(black_box(&op), &cert).unwrap()));
    g.finish();
}

criterion_group!(benches, bounding, envelope, synthesis, observer);
criterion_main!(benches);
