//! Temperature-scaled softmax, cross-entropy and the T²-scaled KL distillation
//! loss, together with their analytic gradients with respect to the logits.
//!
//! All reductions over the batch are means, so loss magnitudes do not depend
//! on the batch size. Class indices are zero-based.

mod matrix;

pub use matrix::Matrix;

use crate::error::{invalid, shape, Result};

/// Class labels for a batch, each in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(invalid("num_classes must be at least 1"));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(invalid(format!(
                "label {l} at position {i} is outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(invalid(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

fn check_labels(logits: &Matrix, labels: &LabelVector) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.cols() != labels.num_classes() {
        return Err(shape(format!(
            "{} logit columns for {} classes",
            logits.cols(),
            labels.num_classes()
        )));
    }
    if logits.rows() == 0 {
        return Err(invalid("empty batch"));
    }
    Ok(())
}

/// Writes `log softmax(row / t)` into `out`.
fn log_softmax_row(row: &[f64], t: f64, out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)) / t;
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = z / t - max;
        sum += o.exp();
    }
    let log_sum = sum.ln();
    for o in out.iter_mut() {
        *o -= log_sum;
    }
}

fn softmax_row(row: &[f64], t: f64, out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)) / t;
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = (z / t - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax of `logits / temperature`, computed with max subtraction.
pub fn softmax_t(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        softmax_row(logits.row(r), temperature, out.row_mut(r));
    }
    Ok(out)
}

/// Row-wise log-softmax of `logits / temperature`.
pub fn log_softmax_t(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        log_softmax_row(logits.row(r), temperature, out.row_mut(r));
    }
    Ok(out)
}

/// Mean negative log-likelihood of the true class under `softmax(logits)`.
pub fn cross_entropy(logits: &Matrix, labels: &LabelVector) -> Result<f64> {
    check_labels(logits, labels)?;
    let log_p = log_softmax_t(logits, 1.0)?;
    let total: f64 = labels
        .as_slice()
        .iter()
        .enumerate()
        .map(|(r, &y)| -log_p[(r, y)])
        .sum();
    Ok((total / logits.rows() as f64).max(0.0))
}

/// `(softmax(logits) − one_hot(labels)) / N`
pub fn cross_entropy_grad(logits: &Matrix, labels: &LabelVector) -> Result<Matrix> {
    check_labels(logits, labels)?;
    let n = logits.rows() as f64;
    let mut grad = softmax_t(logits, 1.0)?;
    for (r, &y) in labels.as_slice().iter().enumerate() {
        grad[(r, y)] -= 1.0;
    }
    for g in grad.as_mut_slice() {
        *g /= n;
    }
    Ok(grad)
}

fn check_pair(teacher: &Matrix, student: &Matrix, temperature: f64) -> Result<()> {
    teacher.expect_same_shape(student)?;
    if teacher.rows() == 0 {
        return Err(invalid("empty batch"));
    }
    check_temperature(temperature)
}

/// Distillation loss: mean over rows of `T² · KL(P_T(T) ‖ P_S(T))`.
///
/// The KL term is evaluated as `Σ p_t (log p_t − log p_s)` on log-softmax
/// rows, so near-identical distributions do not suffer from cancellation in
/// a ratio.
pub fn kd_loss(teacher_logits: &Matrix, student_logits: &Matrix, temperature: f64) -> Result<f64> {
    check_pair(teacher_logits, student_logits, temperature)?;
    let cols = teacher_logits.cols();
    let mut log_t = vec![0.0; cols];
    let mut log_s = vec![0.0; cols];
    let mut total = 0.0;
    for r in 0..teacher_logits.rows() {
        log_softmax_row(teacher_logits.row(r), temperature, &mut log_t);
        log_softmax_row(student_logits.row(r), temperature, &mut log_s);
        let kl: f64 = log_t
            .iter()
            .zip(&log_s)
            .map(|(&lt, &ls)| {
                let p = lt.exp();
                if p == 0.0 {
                    0.0
                } else {
                    p * (lt - ls)
                }
            })
            .sum();
        // Rounding can leave a tiny negative residue for equal rows.
        total += kl.max(0.0);
    }
    Ok(temperature * temperature * total / teacher_logits.rows() as f64)
}

/// Gradient of [`kd_loss`] with respect to the student logits:
/// `T · (P_S(T) − P_T(T)) / N`.
pub fn kd_loss_grad(
    teacher_logits: &Matrix,
    student_logits: &Matrix,
    temperature: f64,
) -> Result<Matrix> {
    kd_grad_scaled(teacher_logits, student_logits, temperature, temperature)
}

/// Gradient of the KL term without the `T²` factor: `(P_S(T) − P_T(T)) / (T · N)`.
///
/// This is the quantity whose magnitude blows up as `T → 0` and vanishes as
/// `T → ∞`.
pub fn kd_loss_grad_unscaled(
    teacher_logits: &Matrix,
    student_logits: &Matrix,
    temperature: f64,
) -> Result<Matrix> {
    kd_grad_scaled(teacher_logits, student_logits, temperature, 1.0 / temperature)
}

fn kd_grad_scaled(teacher: &Matrix, student: &Matrix, temperature: f64, factor: f64) -> Result<Matrix> {
    check_pair(teacher, student, temperature)?;
    let p_t = softmax_t(teacher, temperature)?;
    let p_s = softmax_t(student, temperature)?;
    p_s.weighted_sum(factor, &p_t, -factor)
        .map(|g| g.scale(1.0 / teacher.rows() as f64))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
