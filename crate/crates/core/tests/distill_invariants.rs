mod common;

use common::{distill_config, reference_data, reference_teacher};
use dts_core::distill::ema_losses;
use dts_core::numerics::{cross_entropy, kd_loss};
use dts_core::verify::{replay_scheduler, ReplayParams};
use dts_core::{distill, evaluate, Dataset, Mlp, MetricsRecord, ScheduleParams, SchedulerSpec};

fn trace(records: &[MetricsRecord], num_batches: usize, epochs: usize) -> Vec<(f64, f64, f64)> {
    records
        .iter()
        .map(|r| (r.progress(num_batches, epochs).value(), r.teacher_ce, r.student_ce))
        .collect()
}

fn reference_run(scheduler: SchedulerSpec) -> (Mlp, Mlp, Dataset, Vec<MetricsRecord>) {
    let (train, _) = reference_data();
    let teacher = reference_teacher(&train);
    let mut student = Mlp::new(&[16, 16, 10], 0).unwrap();
    let records = distill(&teacher, &mut student, &train, &distill_config(scheduler, 0)).unwrap();
    (teacher, student, train, records)
}

#[test]
fn dts_run_replays_bit_for_bit_and_stays_in_range() {
    let params = ScheduleParams::range(8.0, 4.0);
    let (_, _, train, records) = reference_run(SchedulerSpec::Dts(params));
    let nb = train.len().div_ceil(32);
    assert_eq!(records.len(), 40 * nb);

    let replayed = replay_scheduler(&ReplayParams::from(&params), &trace(&records, nb, 40)).unwrap();
    for (r, t) in records.iter().zip(&replayed) {
        assert_eq!(r.temperature.to_bits(), t.to_bits(), "epoch {} batch {}", r.epoch, r.batch);
    }

    assert_eq!(records[0].temperature, 8.0);
    let last = records.last().unwrap().temperature;
    assert!((last - 4.0).abs() <= 0.2, "final temperature {last}");
    assert!(records.iter().all(|r| (4.0..=8.0).contains(&r.temperature)));
    // the untrained student lags by more than a nat at the start, which triggers amplification
    assert!(records[0].alpha > 1.0);
}

#[test]
fn smoothed_losses_replay_too() {
    let (train, _) = reference_data();
    let teacher = reference_teacher(&train);
    let params = ScheduleParams::range(6.0, 2.0);
    let mut cfg = distill_config(SchedulerSpec::Dts(params), 3);
    cfg.sgd.epochs = 5;
    cfg.loss_ema = 0.8;
    let mut student = Mlp::new(&[16, 16, 10], 3).unwrap();
    let records = distill(&teacher, &mut student, &train, &cfg).unwrap();
    let nb = train.len().div_ceil(32);

    let mut fed = None;
    let smoothed: Vec<_> = trace(&records, nb, 5)
        .into_iter()
        .map(|(p, lt, ls)| {
            let (t, s) = ema_losses(fed, (lt, ls), 0.8);
            fed = Some((t, s));
            (p, t, s)
        })
        .collect();
    let replayed = replay_scheduler(&ReplayParams::from(&params), &smoothed).unwrap();
    for ((r, t), (_, lt, ls)) in records.iter().zip(&replayed).zip(&smoothed) {
        assert_eq!(r.temperature.to_bits(), t.to_bits());
        assert_eq!(r.d_loss, lt - ls);
    }
}

#[test]
fn static_run_has_constant_temperature() {
    let (_, _, _, records) = reference_run(SchedulerSpec::Static { temperature: 4.0 });
    assert!(records.iter().all(|r| r.temperature == 4.0 && r.alpha == 0.0));
}

#[test]
fn teacher_is_frozen() {
    let (train, _) = reference_data();
    let teacher = reference_teacher(&train);
    let before = teacher.to_bytes();
    let mut student = Mlp::new(&[16, 16, 10], 4).unwrap();
    let mut cfg = distill_config(SchedulerSpec::Dts(ScheduleParams::range(8.0, 4.0)), 4);
    cfg.sgd.epochs = 3;
    distill(&teacher, &mut student, &train, &cfg).unwrap();
    assert_eq!(teacher.to_bytes(), before);
}

#[test]
fn logged_losses_decompose_and_match_recomputation() {
    let (train, _) = reference_data();
    let teacher = reference_teacher(&train);
    let mut cfg = distill_config(SchedulerSpec::Dts(ScheduleParams::range(8.0, 4.0)), 5);
    cfg.sgd.epochs = 1;
    let mut student = Mlp::new(&[16, 16, 10], 5).unwrap();
    let start = student.clone();
    let records = distill(&teacher, &mut student, &train, &cfg).unwrap();
    for r in &records {
        let expected = cfg.ce_weight * r.student_ce + cfg.kd_weight * r.kd_loss;
        assert!((r.total_loss - expected).abs() <= 1e-12, "row {}", r.batch);
        assert_eq!(r.d_loss, r.teacher_ce - r.student_ce);
    }

    // the first batch's losses can be recomputed from the untouched student
    let idx = &dts_core::model::epoch_batches(train.len(), 32, 5, 0)[0];
    let (x, y) = train.subset(idx);
    let (zt, zs) = (teacher.predict(&x).unwrap(), start.predict(&x).unwrap());
    let first = &records[0];
    assert!((first.teacher_ce - cross_entropy(&zt, &y).unwrap()).abs() <= 1e-12);
    assert!((first.student_ce - cross_entropy(&zs, &y).unwrap()).abs() <= 1e-12);
    assert!((first.kd_loss - kd_loss(&zt, &zs, first.temperature).unwrap()).abs() <= 1e-12);
}

#[test]
fn accuracy_ignores_a_constant_logit_shift() {
    let (train, test) = reference_data();
    let teacher = reference_teacher(&train);
    let mut params = teacher.parameters();
    // the output biases are the last 10 parameters; shifting all of them shifts every logit
    let n = params.len();
    for b in &mut params[n - 10..] {
        *b += 3.25;
    }
    let mut shifted = teacher.clone();
    shifted.set_parameters(&params).unwrap();
    assert_eq!(evaluate(&teacher, &test).unwrap().0, evaluate(&shifted, &test).unwrap().0);
}

#[test]
fn distillation_is_deterministic() {
    let (_, s1, _, r1) = reference_run(SchedulerSpec::Dts(ScheduleParams::range(8.0, 4.0)));
    let (_, s2, _, r2) = reference_run(SchedulerSpec::Dts(ScheduleParams::range(8.0, 4.0)));
    assert_eq!(r1, r2);
    assert_eq!(s1.to_bytes(), s2.to_bytes());
}
