use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use wtb_core::windtree::Visit;
use wtb_core::*;

fn params() -> SystemParams {
    SystemParams::new(Vec2::new(1.03, 0.17), Vec2::new(-0.31, 0.98), 0.31, 0.22, 0.61)
}

const START: Vec2 = Vec2 { x: 0.5, y: 0.3 };

fn plane(c: &mut Criterion) {
    c.bench_function("plane tracer, 10^4 crossings", |b| {
        b.iter_batched(
            || PlaneTracer::new(params(), START, true).unwrap(),
            |mut tr| {
                for _ in 0..10_000 {
                    if let Visit::Corner(_) = tr.visit().unwrap() {
                        break;
                    }
                }
                black_box(tr.position())
            },
            BatchSize::SmallInput,
        )
    });
}

fn surface(c: &mut Criterion) {
    let torus = build_torus(&params(), 0.01).unwrap();
    c.bench_function("surface tracer, 10^4 slit crossings", |b| {
        b.iter(|| black_box(trace_surface(&torus, START, true, 10_000).unwrap().crossings))
    });
}

fn renorm(c: &mut Criterion) {
    let torus = build_torus(&params(), 0.01).unwrap();
    let mut g = c.benchmark_group("renormalization");
    g.sample_size(20);
    g.bench_function("induction to t = 30", |b| {
        b.iter(|| black_box(run_induction(&torus, InductionOptions::default()).unwrap().acc.t()))
    });
    g.finish();
}

fn analysis(c: &mut Criterion) {
    let rec = trace_plane(&params(), START, true, 100_000, 1.0).unwrap();
    c.bench_function("strip fit, 10^5 events", |b| b.iter(|| black_box(fit_strip(&rec.checkpoints).unwrap().theta)));
    c.bench_function("diffusion exponent, 10^5 events", |b| {
        b.iter(|| black_box(diffusion_exponent(&rec.checkpoints).unwrap()))
    });
}

criterion_group!(benches, plane, surface, renorm, analysis);
criterion_main!(benches);
