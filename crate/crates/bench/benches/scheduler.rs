use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dts_core::scheduler::{cosine_schedule, Progress};
use dts_core::verify::{replay_scheduler, ReplayParams};
use dts_core::{ScheduleParams, SchedulerState};

fn updates(c: &mut Criterion) {
    let params = ScheduleParams::range(8.0, 4.0);
    let trace: Vec<(f64, f64, f64)> = (0..10_000)
        .map(|k| (k as f64 / 9_999.0, 0.4, 0.4 + (k as f64 * 0.01).sin().abs() * 2.0))
        .collect();

    c.bench_function("cosine_schedule", |b| {
        b.iter(|| cosine_schedule(black_box(Progress::new(0.37))))
    });
    c.bench_function("dts_update_10k", |b| {
        b.iter(|| {
            let mut s = SchedulerState::new(params).unwrap();
            for &(p, lt, ls) in &trace {
                black_box(s.update(Progress::new(p), lt, ls).unwrap());
            }
        })
    });
    c.bench_function("replay_10k", |b| {
        let rp = ReplayParams::from(&params);
        b.iter(|| replay_scheduler(&rp, black_box(&trace)).unwrap())
    });
}

criterion_group!(benches, updates);
criterion_main!(benches);
