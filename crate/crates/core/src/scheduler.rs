//! Temperature schedulers for distillation.
//!
//! [`SchedulerState`] is the dynamic temperature scheduler: a cosine curriculum
//! over training progress, amplified when the student's cross-entropy lags the
//! teacher's by more than one nat, clamped to `[t_min, t_max]` and smoothed
//! with momentum. [`Scheduler`] wraps it together with the static, cosine-only
//! and linear-decay baselines behind one `update` call.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Amplitude of the cosine curve; `S(0) = 1` and `S(1) = 0`.
pub const COSINE_AMPLITUDE: f64 = 0.5;

/// Training progress in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Progress(f64);

impl Progress {
    /// Clamps `value` into `[0, 1]`; NaN maps to 0.
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            return Self(0.0);
        }
        Self(value.clamp(0.0, 1.0))
    }

    /// Fractional progress for a per-batch update:
    /// `(epoch + batch / num_batches) / total_epochs`.
    pub fn from_batch(epoch: usize, batch: usize, num_batches: usize, total_epochs: usize) -> Self {
        let within = if num_batches == 0 {
            0.0
        } else {
            batch as f64 / num_batches as f64
        };
        Self::new((epoch as f64 + within) / total_epochs.max(1) as f64)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `λ·(1 + cos(π·p))` with `λ = 0.5`.
pub fn cosine_schedule(progress: Progress) -> f64 {
    COSINE_AMPLITUDE * (1.0 + (PI * progress.value()).cos())
}

/// `teacher_ce − student_ce`; negative while the student lags the teacher.
pub fn loss_divergence(teacher_ce: f64, student_ce: f64) -> Result<f64> {
    if !teacher_ce.is_finite() || !student_ce.is_finite() {
        return Err(invalid(format!(
            "losses must be finite, got teacher {teacher_ce}, student {student_ce}"
        )));
    }
    Ok(teacher_ce - student_ce)
}

/// Distance from the pole of [`adaptive_alpha`] below which the ceiling applies.
pub const POLE_GUARD: f64 = 1e-12;

/// `α = d / (d + 1 + β)`.
///
/// Within [`POLE_GUARD`] of the pole at `d = −1 − β` the result is
/// `±ceiling`, signed like `d`, instead of an unbounded quotient.
pub fn adaptive_alpha(d_loss: f64, beta: f64, ceiling: f64) -> f64 {
    let denom = d_loss + 1.0 + beta;
    if denom.abs() < POLE_GUARD {
        return ceiling.copysign(d_loss);
    }
    d_loss / denom
}

/// Which reading of the update rule to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtsVariant {
    /// `d = L_t − L_s`; amplified target `t_init · S(p) · α`.
    #[default]
    Resolved,
    /// Alternative reading: `d = L_s − L_t` and the target
    /// `t_init · (t_init · S(p)) · α`, with `t_init` applied twice.
    /// Kept for side-by-side inspection only.
    Literal,
}

fn default_mu() -> f64 {
    0.9
}
fn default_beta() -> f64 {
    1e-8
}
fn default_alpha_ceiling() -> f64 {
    10.0
}

/// Parameters of the dynamic scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub t_init: f64,
    pub t_min: f64,
    pub t_max: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_alpha_ceiling")]
    pub alpha_ceiling: f64,
    #[serde(default)]
    pub variant: DtsVariant,
}

impl ScheduleParams {
    /// Starts at `t_max` and anneals toward `t_min` with the default momentum and guard.
    pub fn range(t_max: f64, t_min: f64) -> Self {
        Self {
            t_init: t_max,
            t_min,
            t_max,
            mu: default_mu(),
            beta: default_beta(),
            alpha_ceiling: default_alpha_ceiling(),
            variant: DtsVariant::Resolved,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.t_init, self.t_min, self.t_max, self.mu, self.beta, self.alpha_ceiling]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(invalid("schedule parameters must be finite"));
        }
        if !(0.0 < self.t_min && self.t_min <= self.t_init && self.t_init <= self.t_max) {
            return Err(invalid(format!(
                "need 0 < t_min <= t_init <= t_max, got t_min={} t_init={} t_max={}",
                self.t_min, self.t_init, self.t_max
            )));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(invalid(format!("momentum must be in [0, 1), got {}", self.mu)));
        }
        if self.beta <= 0.0 {
            return Err(invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if self.alpha_ceiling <= 1.0 {
            return Err(invalid(format!(
                "alpha ceiling must exceed 1, got {}",
                self.alpha_ceiling
            )));
        }
        Ok(())
    }
}

/// What one scheduler update produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureStep {
    /// Temperature to use for this batch.
    pub temperature: f64,
    /// Clamped target before momentum smoothing.
    pub target: f64,
    pub alpha: f64,
    pub d_loss: f64,
}

/// Mutable state of the dynamic scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    params: ScheduleParams,
    t_current: f64,
    last_target: f64,
    last_alpha: f64,
    last_d_loss: f64,
    step_count: u64,
    amplify: bool,
}

impl SchedulerState {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            t_current: params.t_init,
            last_target: params.t_init,
            last_alpha: 0.0,
            last_d_loss: 0.0,
            step_count: 0,
            amplify: true,
        })
    }

    /// Same state machine with the α branch disabled (α is reported as 0).
    pub fn cosine_only(params: ScheduleParams) -> Result<Self> {
        let mut state = Self::new(params)?;
        state.amplify = false;
        Ok(state)
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn temperature(&self) -> f64 {
        self.t_current
    }

    pub fn last_target(&self) -> f64 {
        self.last_target
    }

    pub fn last_alpha(&self) -> f64 {
        self.last_alpha
    }

    pub fn last_d_loss(&self) -> f64 {
        self.last_d_loss
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One scheduler update. The evaluation order is fixed: cosine factor,
    /// divergence, α, target, clamp, momentum blend. `verify::replay_scheduler`
    /// relies on this order for bit-exact replay.
    pub fn update(&mut self, progress: Progress, teacher_ce: f64, student_ce: f64) -> Result<TemperatureStep> {
        let p = &self.params;
        let s = cosine_schedule(progress);
        let d_loss = match p.variant {
            DtsVariant::Resolved => loss_divergence(teacher_ce, student_ce)?,
            DtsVariant::Literal => loss_divergence(student_ce, teacher_ce)?,
        };
        let alpha = if self.amplify {
            adaptive_alpha(d_loss, p.beta, p.alpha_ceiling)
        } else {
            0.0
        };
        let base = match p.variant {
            DtsVariant::Resolved => p.t_init * s,
            DtsVariant::Literal => p.t_init * (p.t_init * s),
        };
        let target = if alpha > 1.0 { base * alpha } else { base };
        let target = target.clamp(p.t_min, p.t_max);
        // The blend is convex; the outer clamp only absorbs last-ulp rounding.
        let blended = p.mu * self.t_current + (1.0 - p.mu) * target;
        self.t_current = blended.clamp(p.t_min, p.t_max);
        self.last_target = target;
        self.last_alpha = alpha;
        self.last_d_loss = d_loss;
        self.step_count += 1;
        Ok(TemperatureStep {
            temperature: self.t_current,
            target,
            alpha,
            d_loss,
        })
    }
}

/// Free-function form of [`SchedulerState::update`], returning the new temperature.
pub fn dts_update(
    state: &mut SchedulerState,
    progress: Progress,
    teacher_ce: f64,
    student_ce: f64,
) -> Result<f64> {
    state.update(progress, teacher_ce, student_ce).map(|s| s.temperature)
}

/// Serializable description of a scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerSpec {
    Static {
        temperature: f64,
    },
    CosineOnly(ScheduleParams),
    Linear {
        t_start: f64,
        t_end: f64,
    },
    Dts(ScheduleParams),
}

impl SchedulerSpec {
    pub fn build(&self) -> Result<Scheduler> {
        match *self {
            SchedulerSpec::Static { temperature } => Scheduler::static_schedule(temperature),
            SchedulerSpec::CosineOnly(params) => Scheduler::cosine_only(params),
            SchedulerSpec::Linear { t_start, t_end } => Scheduler::linear_decay(t_start, t_end),
            SchedulerSpec::Dts(params) => Scheduler::dts(params),
        }
    }

    /// Short label such as `dts-8to4` or `static-4`.
    pub fn label(&self) -> String {
        match self {
            SchedulerSpec::Static { temperature } => format!("static-{temperature}"),
            SchedulerSpec::CosineOnly(params) => {
                format!("cosine-{}to{}", params.t_max, params.t_min)
            }
            SchedulerSpec::Linear { t_start, t_end } => format!("linear-{t_start}to{t_end}"),
            SchedulerSpec::Dts(params) => format!("dts-{}to{}", params.t_max, params.t_min),
        }
    }
}

/// A temperature scheduler ready to be driven by a training loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheduler {
    Static(f64),
    Linear { t_start: f64, t_end: f64 },
    /// Dynamic or cosine-only, depending on how the state was built.
    Dynamic(SchedulerState),
}

impl Scheduler {
    pub fn static_schedule(temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(invalid(format!(
                "static temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self::Static(temperature))
    }

    pub fn linear_decay(t_start: f64, t_end: f64) -> Result<Self> {
        for t in [t_start, t_end] {
            if !(t.is_finite() && t > 0.0) {
                return Err(invalid(format!(
                    "linear schedule endpoints must be positive, got {t_start} -> {t_end}"
                )));
            }
        }
        Ok(Self::Linear { t_start, t_end })
    }

    pub fn cosine_only(params: ScheduleParams) -> Result<Self> {
        SchedulerState::cosine_only(params).map(Self::Dynamic)
    }

    pub fn dts(params: ScheduleParams) -> Result<Self> {
        SchedulerState::new(params).map(Self::Dynamic)
    }

    /// Consults the scheduler for the next batch. Baselines ignore the losses
    /// apart from reporting their divergence.
    pub fn update(&mut self, progress: Progress, teacher_ce: f64, student_ce: f64) -> Result<TemperatureStep> {
        let fixed = |temperature: f64| -> Result<TemperatureStep> {
            Ok(TemperatureStep {
                temperature,
                target: temperature,
                alpha: 0.0,
                d_loss: loss_divergence(teacher_ce, student_ce)?,
            })
        };
        match self {
            Scheduler::Static(t) => fixed(*t),
            Scheduler::Linear { t_start, t_end } => {
                fixed(*t_start + (*t_end - *t_start) * progress.value())
            }
            Scheduler::Dynamic(state) => state.update(progress, teacher_ce, student_ce),
        }
    }
}
