//! Finite-difference checks of every analytic gradient in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finite_diff, relative_error, FdResult, FdSpec};
use crate::error::Result;
use crate::model::Mlp;
use crate::numerics::{cross_entropy, cross_entropy_grad, kd_loss, kd_loss_grad, LabelVector, Matrix};

pub const DEFAULT_INSTANCES: usize = 100;

/// Test hook: corrupt the analytic side so the suite must fail.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Perturbation {
    #[default]
    None,
    /// Multiply every analytic gradient by `1 + eps`.
    Scale(f64),
}

impl Perturbation {
    fn apply(self, grad: &mut [f64]) {
        if let Perturbation::Scale(eps) = self {
            for g in grad {
                *g *= 1.0 + eps;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub instances: usize,
    pub worst_error: f64,
    pub tolerance: f64,
    /// Instances whose finite-difference evaluation was not finite.
    pub non_finite: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite == 0 && self.worst_error <= self.tolerance
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<5} {:<24} instances={:<4} worst_rel_err={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.worst_error,
            self.tolerance
        )
    }
}

const FLOOR: f64 = 1e-12;

struct Tracker {
    report: CheckReport,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            report: CheckReport {
                name,
                instances: 0,
                worst_error: 0.0,
                tolerance,
                non_finite: 0,
            },
        }
    }

    fn record(&mut self, analytic: &[f64], numeric: FdResult) {
        self.report.instances += 1;
        match numeric {
            Ok(n) => {
                let e = relative_error(analytic, &n, FLOOR);
                self.report.worst_error = self.report.worst_error.max(e);
            }
            Err(_) => self.report.non_finite += 1,
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite")
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> LabelVector {
    LabelVector::new((0..n).map(|_| rng.random_range(0..c)).collect(), c).expect("in range")
}

/// Gradient of mean cross-entropy with respect to the logits.
pub fn check_cross_entropy(seed: u64, instances: usize, fd: FdSpec, hook: Perturbation) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("cross_entropy/logits", fd.logit_tolerance);
    for _ in 0..instances {
        let (n, c) = (rng.random_range(1..7), rng.random_range(2..9));
        let z = random_matrix(&mut rng, n, c, 5.0);
        let y = random_labels(&mut rng, n, c);
        let mut analytic = cross_entropy_grad(&z, &y)?.into_vec();
        hook.apply(&mut analytic);
        let numeric = finite_diff(
            |v| {
                let m = Matrix::from_vec(n, c, v.to_vec()).expect("finite");
                cross_entropy(&m, &y).unwrap_or(f64::NAN)
            },
            z.as_slice(),
            fd.step,
        );
        t.record(&analytic, numeric);
    }
    Ok(t.report)
}

/// Gradient of the T²-scaled distillation loss with respect to the student logits.
pub fn check_kd_loss(seed: u64, instances: usize, fd: FdSpec, hook: Perturbation) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("kd_loss/logits", fd.logit_tolerance);
    for _ in 0..instances {
        let (n, c) = (rng.random_range(1..7), rng.random_range(2..9));
        let teacher = random_matrix(&mut rng, n, c, 5.0);
        let student = random_matrix(&mut rng, n, c, 5.0);
        let temp = rng.random_range(0.5..10.0);
        let mut analytic = kd_loss_grad(&teacher, &student, temp)?.into_vec();
        hook.apply(&mut analytic);
        let numeric = finite_diff(
            |v| {
                let s = Matrix::from_vec(n, c, v.to_vec()).expect("finite");
                kd_loss(&teacher, &s, temp).unwrap_or(f64::NAN)
            },
            student.as_slice(),
            fd.step,
        );
        t.record(&analytic, numeric);
    }
    Ok(t.report)
}

/// Which scalar objective to differentiate through the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    CrossEntropy,
    /// `ce_weight · CE + kd_weight · kd_loss(T)` against fixed teacher logits.
    Distillation {
        ce_weight: f64,
        kd_weight: f64,
    },
}

fn objective_value(objective: Objective, logits: &Matrix, labels: &LabelVector, teacher: &Matrix, temp: f64) -> Result<f64> {
    match objective {
        Objective::CrossEntropy => cross_entropy(logits, labels),
        Objective::Distillation { ce_weight, kd_weight } => {
            Ok(ce_weight * cross_entropy(logits, labels)? + kd_weight * kd_loss(teacher, logits, temp)?)
        }
    }
}

fn objective_grad(objective: Objective, logits: &Matrix, labels: &LabelVector, teacher: &Matrix, temp: f64) -> Result<Matrix> {
    match objective {
        Objective::CrossEntropy => cross_entropy_grad(logits, labels),
        Objective::Distillation { ce_weight, kd_weight } => cross_entropy_grad(logits, labels)?
            .weighted_sum(ce_weight, &kd_loss_grad(teacher, logits, temp)?, kd_weight),
    }
}

/// End-to-end parameter gradients of `model`'s objective on one batch:
/// returns `(analytic, finite-difference)`.
pub fn model_gradients(
    model: &Mlp,
    inputs: &Matrix,
    labels: &LabelVector,
    teacher_logits: &Matrix,
    temperature: f64,
    objective: Objective,
    step: f64,
) -> Result<(Vec<f64>, FdResult)> {
    let mut m = model.clone();
    let logits = m.forward(inputs)?;
    let upstream = objective_grad(objective, &logits, labels, teacher_logits, temperature)?;
    let analytic = m.backward(&upstream)?.flatten();
    let numeric = finite_diff(
        |params| {
            let mut probe = model.clone();
            if probe.set_parameters(params).is_err() {
                return f64::NAN;
            }
            probe
                .predict(inputs)
                .and_then(|z| objective_value(objective, &z, labels, teacher_logits, temperature))
                .unwrap_or(f64::NAN)
        },
        &model.parameters(),
        step,
    );
    Ok((analytic, numeric))
}

/// Draws a model (with random biases) and a batch such that every hidden
/// pre-activation stays well clear of the ReLU kink; a finite difference that
/// straddles the kink measures nothing about the backward pass.
fn sample_smooth_instance(rng: &mut ChaCha8Rng, sizes: &[usize], step: f64) -> Result<(Mlp, Matrix)> {
    let margin = 1e3 * step;
    loop {
        let mut model = Mlp::new(sizes, rng.random())?;
        let mut params = model.parameters();
        let mut offset = 0;
        for (w, b) in model.weights().iter().zip(model.biases()) {
            offset += w.rows() * w.cols();
            for p in &mut params[offset..offset + b.len()] {
                *p = rng.random_range(-0.5..0.5);
            }
            offset += b.len();
        }
        model.set_parameters(&params)?;
        let n = rng.random_range(1..6);
        let x = random_matrix(rng, n, sizes[0], 1.5);
        if clear_of_kinks(&model, &x, margin)? {
            return Ok((model, x));
        }
    }
}

fn clear_of_kinks(model: &Mlp, x: &Matrix, margin: f64) -> Result<bool> {
    let layers = model.weights().len();
    let mut h = x.clone();
    for (l, (w, b)) in model.weights().iter().zip(model.biases()).enumerate() {
        let mut z = h.matmul(w)?;
        z.add_row_vector(b)?;
        if l + 1 == layers {
            break;
        }
        if z.as_slice().iter().any(|v| v.abs() < margin) {
            return Ok(false);
        }
        for v in z.as_mut_slice() {
            *v = v.max(0.0);
        }
        h = z;
    }
    Ok(true)
}

/// Parameter gradients of small random MLPs under `objective`.
pub fn check_model(
    name: &'static str,
    objective: Objective,
    seed: u64,
    instances: usize,
    fd: FdSpec,
    hook: Perturbation,
) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new(name, fd.param_tolerance);
    for i in 0..instances {
        // the first instance is always the 2-8-3 reference shape
        let sizes: Vec<usize> = if i == 0 {
            vec![2, 8, 3]
        } else {
            let depth = rng.random_range(1..3);
            let mut s = vec![rng.random_range(1..5)];
            s.extend((0..depth).map(|_| rng.random_range(2..9)));
            s.push(rng.random_range(2..5));
            s
        };
        let (model, x) = sample_smooth_instance(&mut rng, &sizes, fd.step)?;
        let n = x.rows();
        let c = *sizes.last().expect("non-empty");
        let y = random_labels(&mut rng, n, c);
        let teacher = random_matrix(&mut rng, n, c, 4.0);
        let temp = rng.random_range(1.0..8.0);
        let (mut analytic, numeric) = model_gradients(&model, &x, &y, &teacher, temp, objective, fd.step)?;
        hook.apply(&mut analytic);
        t.record(&analytic, numeric);
    }
    Ok(t.report)
}

/// Every check, in a fixed order: two logit-level suites, two parameter-level suites.
pub fn run_suite(seed: u64, instances: usize, hook: Perturbation) -> Result<Vec<CheckReport>> {
    let fd = FdSpec::default();
    Ok(vec![
        check_cross_entropy(seed, instances, fd, hook)?,
        check_kd_loss(seed.wrapping_add(1), instances, fd, hook)?,
        check_model("model_ce/params", Objective::CrossEntropy, seed.wrapping_add(2), instances, fd, hook)?,
        check_model(
            "model_ce_kd/params",
            Objective::Distillation {
                ce_weight: 0.1,
                kd_weight: 0.9,
            },
            seed.wrapping_add(3),
            instances,
            fd,
            hook,
        )?,
    ])
}
