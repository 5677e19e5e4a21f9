//! Teacher → student distillation with a per-batch temperature scheduler.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::model::{epoch_batches, Mlp, SgdConfig};
use crate::numerics::{argmax, cross_entropy, cross_entropy_grad, kd_loss, kd_loss_grad};
use crate::scheduler::{Progress, SchedulerSpec};

fn default_kd_weight() -> f64 {
    0.9
}
fn default_ce_weight() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    #[serde(default = "default_kd_weight")]
    pub kd_weight: f64,
    #[serde(default = "default_ce_weight")]
    pub ce_weight: f64,
    /// Exponential smoothing of the CE losses handed to the scheduler, in
    /// `[0, 1)`. Zero (the default) feeds raw batch losses.
    #[serde(default)]
    pub loss_ema: f64,
    pub scheduler: SchedulerSpec,
    pub sgd: SgdConfig,
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let weights_ok = self.kd_weight.is_finite()
            && self.ce_weight.is_finite()
            && self.kd_weight >= 0.0
            && self.ce_weight >= 0.0;
        if !weights_ok || (self.kd_weight == 0.0 && self.ce_weight == 0.0) {
            return Err(invalid(format!(
                "loss weights must be non-negative and not both zero, got kd={} ce={}",
                self.kd_weight, self.ce_weight
            )));
        }
        if !(0.0..1.0).contains(&self.loss_ema) {
            return Err(invalid(format!("loss_ema must be in [0, 1), got {}", self.loss_ema)));
        }
        self.sgd.validate()?;
        self.scheduler.build().map(|_| ())
    }
}

/// One row of per-batch distillation telemetry.
///
/// `teacher_ce` and `student_ce` are raw batch losses; `d_loss` and `alpha`
/// are what the scheduler derived from them (after smoothing, if `loss_ema`
/// is set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub batch: usize,
    pub temperature: f64,
    pub alpha: f64,
    pub d_loss: f64,
    pub teacher_ce: f64,
    pub student_ce: f64,
    pub kd_loss: f64,
    pub total_loss: f64,
    pub lr: f64,
}

impl MetricsRecord {
    /// Progress at which this row's scheduler update happened.
    pub fn progress(&self, num_batches: usize, total_epochs: usize) -> Progress {
        Progress::from_batch(self.epoch, self.batch, num_batches, total_epochs)
    }
}

/// Writes records as CSV with a header row named after the fields.
pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record([
            "epoch", "batch", "temperature", "alpha", "d_loss", "teacher_ce", "student_ce",
            "kd_loss", "total_loss", "lr",
        ])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_metrics_csv(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    write_metrics_csv(records, std::fs::File::create(path)?)
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Top-1 accuracy and mean cross-entropy.
pub fn evaluate(model: &Mlp, dataset: &Dataset) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(invalid("cannot evaluate on an empty dataset"));
    }
    let logits = model.predict(dataset.features())?;
    let correct = logits
        .row_iter()
        .zip(dataset.labels().as_slice())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    let ce = cross_entropy(&logits, dataset.labels())?;
    Ok((correct as f64 / dataset.len() as f64, ce))
}

/// Smoothed `(teacher, student)` losses; the first batch passes through.
pub fn ema_losses(previous: Option<(f64, f64)>, current: (f64, f64), decay: f64) -> (f64, f64) {
    match previous {
        Some((t, s)) if decay > 0.0 => (
            decay * t + (1.0 - decay) * current.0,
            decay * s + (1.0 - decay) * current.1,
        ),
        _ => current,
    }
}

/// Trains `student` against the frozen `teacher` and returns one record per batch.
///
/// Per batch: teacher and student logits, batch CE of both against the true
/// labels, a scheduler update at fractional progress, then one SGD step on
/// `ce_weight · CE(student) + kd_weight · kd_loss(T)`.
pub fn distill(
    teacher: &Mlp,
    student: &mut Mlp,
    dataset: &Dataset,
    config: &DistillConfig,
) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    let c = dataset.num_classes();
    if teacher.num_classes() != c || student.num_classes() != c {
        return Err(invalid(format!(
            "class counts differ: teacher {}, student {}, data {c}",
            teacher.num_classes(),
            student.num_classes()
        )));
    }
    if teacher.input_dim() != dataset.dim() || student.input_dim() != dataset.dim() {
        return Err(invalid(format!(
            "input widths differ: teacher {}, student {}, data {}",
            teacher.input_dim(),
            student.input_dim(),
            dataset.dim()
        )));
    }

    let sgd = &config.sgd;
    let mut scheduler = config.scheduler.build()?;
    let num_batches = dataset.len().div_ceil(sgd.batch_size);
    let mut fed: Option<(f64, f64)> = None;
    let mut records = Vec::with_capacity(sgd.epochs * num_batches);

    for epoch in 0..sgd.epochs {
        let lr = sgd.lr_at(epoch);
        for (batch, idx) in epoch_batches(dataset.len(), sgd.batch_size, sgd.seed, epoch)
            .into_iter()
            .enumerate()
        {
            let (x, y) = dataset.subset(&idx);
            let teacher_logits = teacher.predict(&x)?;
            let student_logits = student.forward(&x)?;
            let teacher_ce = cross_entropy(&teacher_logits, &y)?;
            let student_ce = cross_entropy(&student_logits, &y)?;

            let (fed_t, fed_s) = ema_losses(fed, (teacher_ce, student_ce), config.loss_ema);
            fed = Some((fed_t, fed_s));

            let progress = Progress::from_batch(epoch, batch, num_batches, sgd.epochs);
            let step = scheduler.update(progress, fed_t, fed_s)?;
            let t = step.temperature;

            let kd = kd_loss(&teacher_logits, &student_logits, t)?;
            let total_loss = config.ce_weight * student_ce + config.kd_weight * kd;
            let grad = cross_entropy_grad(&student_logits, &y)?.weighted_sum(
                config.ce_weight,
                &kd_loss_grad(&teacher_logits, &student_logits, t)?,
                config.kd_weight,
            )?;
            let grads = student.backward(&grad)?;
            student.sgd_step(&grads, lr)?;

            records.push(MetricsRecord {
                epoch,
                batch,
                temperature: t,
                alpha: step.alpha,
                d_loss: step.d_loss,
                teacher_ce,
                student_ce,
                kd_loss: kd,
                total_loss,
                lr,
            });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::model::train_supervised;
    use crate::numerics::{LabelVector, Matrix};
    use crate::scheduler::ScheduleParams;

    fn sgd(epochs: usize) -> SgdConfig {
        SgdConfig {
            learning_rate: 0.05,
            milestones: vec![],
            decay_factor: 1.0,
            epochs,
            batch_size: 16,
            seed: 4,
        }
    }

    #[test]
    fn evaluate_examples() {
        // one-hot logits via a linear model fed one-hot inputs scaled large
        let n = 4;
        let x = Matrix::from_vec(n, n, (0..n * n).map(|i| if i % (n + 1) == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let y = LabelVector::new((0..n).collect(), n).unwrap();
        let data = Dataset::new(x, y).unwrap();
        let mut m = Mlp::zeros(&[n, n]).unwrap();
        let mut p = vec![0.0; m.num_parameters()];
        for i in 0..n {
            p[i * n + i] = 50.0;
        }
        m.set_parameters(&p).unwrap();
        let (acc, ce) = evaluate(&m, &data).unwrap();
        assert_eq!(acc, 1.0);
        assert!(ce < 1e-20);

        // constant logits on a balanced set: everything goes to class 0
        let constant = Mlp::zeros(&[n, n]).unwrap();
        assert_eq!(evaluate(&constant, &data).unwrap().0, 0.25);
    }

    #[test]
    fn evaluate_hand_case() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let y = LabelVector::new(vec![0, 1, 1], 2).unwrap();
        let data = Dataset::new(x, y).unwrap();
        let mut m = Mlp::zeros(&[2, 2]).unwrap();
        // logits: row0 [2,0], row1 [0,1], row2 [2,1] → predictions 0,1,0
        m.set_parameters(&[2.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((evaluate(&m, &data).unwrap().0 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kd_weight_zero_matches_supervised() {
        let data = make_blobs(3, 30, 4, 0.4, 1).unwrap();
        let teacher = Mlp::new(&[4, 12, 3], 2).unwrap();
        let init = Mlp::new(&[4, 6, 3], 3).unwrap();

        let cfg = DistillConfig {
            kd_weight: 0.0,
            ce_weight: 0.5,
            loss_ema: 0.0,
            scheduler: SchedulerSpec::Static { temperature: 4.0 },
            sgd: sgd(3),
        };
        let mut distilled = init.clone();
        distill(&teacher, &mut distilled, &data, &cfg).unwrap();

        // scaling the loss by 0.5 is the same as halving the learning rate
        let mut supervised = init.clone();
        let mut plain = sgd(3);
        plain.learning_rate *= 0.5;
        train_supervised(&mut supervised, &data, &plain).unwrap();
        assert_eq!(distilled.to_bytes(), supervised.to_bytes());
    }

    #[test]
    fn copy_of_teacher_starts_with_zero_divergence() {
        let data = make_blobs(3, 30, 4, 0.4, 1).unwrap();
        let teacher = Mlp::new(&[4, 8, 3], 2).unwrap();
        let mut student = teacher.clone();
        let cfg = DistillConfig {
            kd_weight: 0.9,
            ce_weight: 0.1,
            loss_ema: 0.0,
            scheduler: SchedulerSpec::Dts(ScheduleParams::range(8.0, 4.0)),
            sgd: sgd(1),
        };
        let records = distill(&teacher, &mut student, &data, &cfg).unwrap();
        assert_eq!(records[0].kd_loss, 0.0);
        assert_eq!(records[0].d_loss, 0.0);
    }

    #[test]
    fn rejects_class_mismatch() {
        let data = make_blobs(3, 10, 4, 0.4, 1).unwrap();
        let teacher = Mlp::new(&[4, 8, 4], 2).unwrap();
        let mut student = Mlp::new(&[4, 3], 2).unwrap();
        let cfg = DistillConfig {
            kd_weight: 0.9,
            ce_weight: 0.1,
            loss_ema: 0.0,
            scheduler: SchedulerSpec::Static { temperature: 4.0 },
            sgd: sgd(1),
        };
        assert!(matches!(
            distill(&teacher, &mut student, &data, &cfg),
            Err(crate::DtsError::InvalidArgument(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = DistillConfig {
            kd_weight: 0.0,
            ce_weight: 0.0,
            loss_ema: 0.0,
            scheduler: SchedulerSpec::Static { temperature: 4.0 },
            sgd: sgd(1),
        };
        assert!(cfg.validate().is_err());
        cfg.kd_weight = 1.0;
        assert!(cfg.validate().is_ok());
        cfg.loss_ema = 1.0;
        assert!(cfg.validate().is_err());
        cfg.loss_ema = 0.0;
        cfg.scheduler = SchedulerSpec::Static { temperature: -1.0 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn metrics_csv_header_and_round_trip() {
        let rec = MetricsRecord {
            epoch: 1,
            batch: 2,
            temperature: 7.5,
            alpha: 0.25,
            d_loss: -0.1,
            teacher_ce: 0.3,
            student_ce: 0.4,
            kd_loss: 0.01,
            total_loss: 0.049,
            lr: 0.05,
        };
        let mut buf = Vec::new();
        write_metrics_csv(std::slice::from_ref(&rec), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "epoch,batch,temperature,alpha,d_loss,teacher_ce,student_ce,kd_loss,total_loss,lr\n"
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        save_metrics_csv(std::slice::from_ref(&rec), &path).unwrap();
        assert_eq!(read_metrics_csv(&path).unwrap(), vec![rec]);
    }
}
