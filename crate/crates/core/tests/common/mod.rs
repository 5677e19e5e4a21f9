#![allow(dead_code)]

use dts_core::data::{make_blobs, split};
use dts_core::model::train_supervised;
use dts_core::{Dataset, DistillConfig, Mlp, SchedulerSpec, SgdConfig};

/// 10 blobs in 16 dimensions, spread 0.35, 80/20 split.
pub fn reference_data() -> (Dataset, Dataset) {
    let data = make_blobs(10, 200, 16, 0.35, 9).unwrap();
    split(&data, 0.8, 9).unwrap()
}

pub fn reference_sgd(seed: u64) -> SgdConfig {
    SgdConfig {
        learning_rate: 0.05,
        milestones: vec![24, 32],
        decay_factor: 0.1,
        epochs: 40,
        batch_size: 32,
        seed,
    }
}

pub fn reference_teacher(train: &Dataset) -> Mlp {
    let mut teacher = Mlp::new(&[16, 64, 64, 10], 1).unwrap();
    train_supervised(&mut teacher, train, &reference_sgd(1)).unwrap();
    teacher
}

pub fn distill_config(scheduler: SchedulerSpec, seed: u64) -> DistillConfig {
    DistillConfig {
        kd_weight: 0.9,
        ce_weight: 0.1,
        loss_ema: 0.0,
        scheduler,
        sgd: reference_sgd(seed),
    }
}
