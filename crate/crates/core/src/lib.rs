//! Knowledge distillation with a dynamic temperature scheduler.
//!
//! - [`numerics`]: temperature softmax, cross-entropy, the T²-scaled KL
//!   distillation loss and their analytic gradients.
//! - [`scheduler`]: the dynamic temperature scheduler and its baselines.
//! - [`model`]: ReLU MLPs, backpropagation, SGD with milestone decay.
//! - [`distill`]: the teacher → student training loop and its telemetry.
//! - [`data`]: synthetic blobs, CSV ingestion, seeded splits.
//! - [`verify`]: finite differences, reference KL, scheduler replay.

pub mod data;
pub mod distill;
mod error;
pub mod model;
pub mod numerics;
pub mod scheduler;
pub mod verify;

pub use data::Dataset;
pub use distill::{distill, evaluate, DistillConfig, MetricsRecord};
pub use error::{DtsError, Result};
pub use model::{EpochRecord, Gradients, Mlp, SgdConfig};
pub use numerics::{LabelVector, Matrix};
pub use scheduler::{Progress, ScheduleParams, Scheduler, SchedulerSpec, SchedulerState};
